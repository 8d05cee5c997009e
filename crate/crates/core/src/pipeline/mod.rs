//! Two-task orchestration: training, batch prediction, evaluation, model files.
//!
//! Every random choice is drawn from a stream derived from the config seed and
//! the task, so the two tasks never influence each other and a run is fully
//! determined by `(config, dataset)` — worker-thread count included.

mod bundle;
mod config;
mod dataset;

pub use bundle::{
    load_bundle, save_bundle, section_spans, Metadata, ModelBundle, TaskModels, FORMAT_VERSION, HEADER_SECTION, MAGIC,
    SECTIONS,
};
pub use config::{CnnSection, Config, ForestSection, FusionSection, TaskSection};
pub use dataset::{load_labels, parse_labels, resolve_image, task_label, DatasetRecord, TaskId, IMAGE_EXTENSIONS, LABEL_HEADER};

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::features::{final_feature_vector, FeatureLayout, LayoutTable};
use crate::forest::{train_forest, Dataset, Forest, ForestParams};
use crate::fusion::{evaluate, fuse, tune_weight, EvalReport, FusionWeights};
use crate::imaging::{augment, decode_image, extract_patches, Image};
use crate::roi::{crop_lesion, RoiConfig};
use crate::tinycnn::{predict_image, train_cnn, CnnModel, LossRecord, Tensor};
use crate::{rng, ClassId, Error, ProbVector, Result};

pub const THREADS_ENV: &str = "LESIONFUSE_THREADS";

/// Images handled per parallel chunk while streaming predictions.
pub const PREDICT_CHUNK: usize = 32;

const PURPOSE_SPLIT: u64 = 1;
const PURPOSE_FOREST: u64 = 2;
const PURPOSE_CNN: u64 = 3;

fn task_seed(seed: u64, task: TaskId, purpose: u64) -> u64 {
    rng::derive(rng::derive(seed, task.index() as u64 + 1), purpose)
}

/// Applies an optional cap to a requested worker count; 0 means "all cores".
pub fn cap_threads(requested: usize, cap: Option<&str>) -> Result<usize> {
    let cap = match cap.map(str::trim) {
        Some(v) if !v.is_empty() => Some(
            v.parse::<usize>()
                .map_err(|_| Error::Config(format!("{THREADS_ENV}=`{v}` is not a thread count")))?,
        ),
        _ => None,
    };
    Ok(match (requested, cap) {
        (r, None | Some(0)) => r,
        (0, Some(c)) => c,
        (r, Some(c)) => r.min(c),
    })
}

/// Worker count after applying the `LESIONFUSE_THREADS` cap.
pub fn effective_threads(requested: usize) -> Result<usize> {
    cap_threads(requested, std::env::var(THREADS_ENV).ok().as_deref())
}

/// Runs `f` on a dedicated pool of `threads` workers (0 = rayon's default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(effective_threads(threads)?)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn read_roi(path: &Path, roi: &RoiConfig) -> Result<(Image, u32)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = decode_image(&bytes).map_err(|reason| Error::ImageDecode {
        path: path.to_owned(),
        reason,
    })?;
    Ok((crop_lesion(&img, roi), crc32fast::hash(&bytes)))
}

/// Stratified split: `round(frac · n_c)` of each class to validation, clamped
/// so both sides keep at least one sample of every class. Indices ascend.
pub fn stratified_split(labels: &[ClassId], frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = rng::stream(seed, 0);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [ClassId::Negative, ClassId::Positive] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() || (frac > 0.0 && idx.len() < 2) {
            return Err(Error::Data(format!(
                "{} {class} sample(s): need at least {} to train{}",
                idx.len(),
                if frac > 0.0 { 2 } else { 1 },
                if frac > 0.0 { " and validate" } else { "" }
            )));
        }
        idx.shuffle(&mut rng);
        let n_val = if frac > 0.0 {
            ((frac * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1)
        } else {
            0
        };
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Fused, CNN-only and forest-only metrics on the validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReports {
    pub fused: EvalReport,
    pub cnn: EvalReport,
    pub forest: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskMetrics {
    pub task: TaskId,
    pub n_train: usize,
    pub n_validation: usize,
    /// Training samples after augmentation.
    pub n_augmented: usize,
    pub weights: FusionWeights,
    pub validation: Option<ValidationReports>,
    pub loss_history: Vec<LossRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub metrics: [TaskMetrics; 2],
}

struct TaskData {
    records: Vec<DatasetRecord>,
    rois: Vec<Image>,
}

fn load_task(cfg: &Config, task: TaskId, hasher: &mut crc32fast::Hasher) -> Result<TaskData> {
    let labels = cfg.labels_for(task).expect("validated config names labels for every task");
    let records = load_labels(labels, &cfg.images_dir)?;
    let loaded: Vec<(Image, u32)> = records
        .par_iter()
        .map(|r| read_roi(&r.path, &cfg.roi))
        .collect::<Result<_>>()?;
    hasher.update(task.name().as_bytes());
    let mut rois = Vec::with_capacity(loaded.len());
    for (r, (roi, crc)) in records.iter().zip(loaded) {
        hasher.update(r.image_id.as_bytes());
        hasher.update(&[0, r.melanoma as u8, r.seborrheic_keratosis as u8]);
        hasher.update(&crc.to_le_bytes());
        rois.push(roi);
    }
    Ok(TaskData { records, rois })
}

/// Both branch outputs for one ROI.
pub fn branch_outputs(cnn: &CnnModel, forest: &Forest, roi: &Image) -> Result<(ProbVector, ProbVector)> {
    Ok((predict_image(cnn, roi)?, forest.predict_proba(&final_feature_vector(roi))?))
}

fn train_task(cfg: &Config, task: TaskId, data: &TaskData) -> Result<(TaskModels, TaskMetrics)> {
    let ctx = |e: Error| match e {
        Error::Data(m) => Error::Data(format!("{task}: {m}")),
        other => other,
    };
    let labels: Vec<ClassId> = data.records.iter().map(|r| task_label(r, task)).collect();
    let (train_idx, val_idx) =
        stratified_split(&labels, cfg.validation_fraction, task_seed(cfg.seed, task, PURPOSE_SPLIT)).map_err(ctx)?;

    let augmented: Vec<(Image, ClassId)> = train_idx
        .par_iter()
        .map(|&i| {
            if cfg.augment {
                augment(&data.rois[i], labels[i])
            } else {
                vec![(data.rois[i].clone(), labels[i])]
            }
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();

    let vectors: Vec<_> = augmented.par_iter().map(|(img, _)| final_feature_vector(img)).collect();
    let dataset = Dataset::from_vectors(&vectors, augmented.iter().map(|a| a.1).collect())?;
    drop(vectors);
    let f = &cfg.forest;
    let forest = train_forest(
        &dataset,
        &ForestParams {
            n_trees: f.n_trees,
            mtry: f.mtry,
            max_depth: f.max_depth,
            min_samples_leaf: f.min_samples_leaf,
            seed: task_seed(cfg.seed, task, PURPOSE_FOREST),
            vote: f.vote,
        },
    )
    .map_err(ctx)?;

    let side = cfg.cnn.input_side;
    let samples: Vec<(Tensor, ClassId)> = augmented
        .par_iter()
        .map(|(img, y)| {
            extract_patches(img)
                .iter()
                .map(|p| Ok((Tensor::from_image(&p.image, side)?, *y)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let n_augmented = augmented.len();
    drop(augmented);
    let (cnn, loss_history) = train_cnn(
        &samples,
        &cfg.cnn.spec(),
        &cfg.cnn.train_config(task_seed(cfg.seed, task, PURPOSE_CNN)),
    )
    .map_err(ctx)?;
    drop(samples);

    let outputs: Vec<(ProbVector, ProbVector)> = val_idx
        .par_iter()
        .map(|&i| branch_outputs(&cnn, &forest, &data.rois[i]))
        .collect::<Result<_>>()?;
    let (r1, r2): (Vec<_>, Vec<_>) = outputs.into_iter().unzip();
    let val_labels: Vec<ClassId> = val_idx.iter().map(|&i| labels[i]).collect();
    let weights = match cfg.fusion.weight {
        Some(w) => FusionWeights::new(w)?,
        None if val_idx.is_empty() => FusionWeights::default(),
        None => tune_weight(&r1, &r2, &val_labels)?,
    };
    let validation = if val_idx.is_empty() {
        None
    } else {
        let fused: Vec<_> = r1.iter().zip(&r2).map(|(a, b)| fuse(a, b, weights)).collect();
        Some(ValidationReports {
            fused: evaluate(&fused, &val_labels)?,
            cnn: evaluate(&r1, &val_labels)?,
            forest: evaluate(&r2, &val_labels)?,
        })
    };
    let metrics = TaskMetrics {
        task,
        n_train: train_idx.len(),
        n_validation: val_idx.len(),
        n_augmented,
        weights,
        validation,
        loss_history,
    };
    Ok((TaskModels { forest, cnn, weights }, metrics))
}

/// Trains both tasks and assembles the bundle without touching the output path.
pub fn train_bundle(cfg: &Config) -> Result<TrainOutcome> {
    with_threads(cfg.threads, || {
        let mut hasher = crc32fast::Hasher::new();
        let mut trained = Vec::with_capacity(2);
        let mut n_images = [0u64; 2];
        for task in TaskId::ALL {
            let data = load_task(cfg, task, &mut hasher)?;
            n_images[task.index()] = data.records.len() as u64;
            trained.push(train_task(cfg, task, &data)?);
        }
        let [(m1, t1), (m2, t2)]: [_; 2] = trained.try_into().expect("two tasks");
        let bundle = ModelBundle {
            layout: LayoutTable::from_layout(&FeatureLayout::canonical()),
            tasks: [m1, m2],
            metadata: Metadata {
                seed: cfg.seed,
                dataset_hash: hasher.finalize(),
                timestamp: cfg.timestamp,
                roi: cfg.roi,
                n_images,
            },
        };
        Ok(TrainOutcome {
            bundle,
            metrics: [t1, t2],
        })
    })?
}

/// `<output>.<task>.loss.csv`
pub fn loss_history_path(output: &Path, task: TaskId) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_owned();
    name.push(format!(".{task}.loss.csv"));
    output.with_file_name(name)
}

pub fn loss_history_csv(history: &[LossRecord]) -> String {
    let mut s = String::from("epoch,batch,loss\n");
    for r in history {
        let _ = writeln!(s, "{},{},{:e}", r.epoch, r.batch, r.loss);
    }
    s
}

/// Trains, then writes the bundle (and loss curves if enabled) to `cfg.output`.
pub fn run_train(cfg: &Config) -> Result<TrainOutcome> {
    let outcome = train_bundle(cfg)?;
    save_bundle(&outcome.bundle, &cfg.output)?;
    if cfg.loss_history {
        for m in &outcome.metrics {
            let path = loss_history_path(&cfg.output, m.task);
            std::fs::write(&path, loss_history_csv(&m.loss_history)).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(outcome)
}

/// Fused probability and class per task for one decoded image.
pub fn predict_decoded(bundle: &ModelBundle, img: &Image) -> Result<[(ProbVector, ClassId); 2]> {
    let roi = crop_lesion(img, &bundle.metadata.roi);
    let one = |t: &TaskModels| -> Result<(ProbVector, ClassId)> {
        let (r1, r2) = branch_outputs(&t.cnn, &t.forest, &roi)?;
        let p = fuse(&r1, &r2, t.weights);
        Ok((p, crate::fusion::classify(&p)))
    };
    Ok([one(&bundle.tasks[0])?, one(&bundle.tasks[1])?])
}

pub fn predict_path(bundle: &ModelBundle, path: &Path) -> Result<[(ProbVector, ClassId); 2]> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = decode_image(&bytes).map_err(|reason| Error::ImageDecode {
        path: path.to_owned(),
        reason,
    })?;
    predict_decoded(bundle, &img)
}

pub const PREDICT_HEADER: &str = "image_id,task1_prob,task1_class,task2_prob,task2_class";
pub const ERROR_MARKER: &str = "error";

fn image_id(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PredictSummary {
    pub rows: usize,
    /// `(image path, reason)` for rows written with the error marker.
    pub failures: Vec<(PathBuf, String)>,
}

/// Streams one CSV row per image, in input order. Unreadable images get an
/// error row and are reported in the summary; they never abort the run.
pub fn run_predict(bundle: &ModelBundle, images: &[PathBuf], out: &mut dyn Write) -> Result<PredictSummary> {
    let io = |e| Error::io("<predict output>", e);
    writeln!(out, "{PREDICT_HEADER}").map_err(io)?;
    let mut summary = PredictSummary::default();
    for chunk in images.chunks(PREDICT_CHUNK) {
        let rows: Vec<(String, Option<String>)> = chunk
            .par_iter()
            .map(|path| {
                let id = image_id(path);
                match predict_path(bundle, path) {
                    Ok([(p1, c1), (p2, c2)]) => (
                        format!("{id},{:.6},{},{:.6},{}", p1.positive(), c1.index(), p2.positive(), c2.index()),
                        None,
                    ),
                    Err(e) => (format!("{id},{m},{m},{m},{m}", m = ERROR_MARKER), Some(e.to_string())),
                }
            })
            .collect();
        for (path, (line, err)) in chunk.iter().zip(rows) {
            writeln!(out, "{line}").map_err(io)?;
            summary.rows += 1;
            if let Some(e) = err {
                summary.failures.push((path.clone(), e));
            }
        }
    }
    out.flush().map_err(io)?;
    Ok(summary)
}

/// Expands a predict `--images` argument: a directory (its image files, sorted),
/// a single image file, or a text list with one path per line (relative paths
/// resolve against the list's directory; blank lines and `#` comments skipped).
pub fn resolve_inputs(arg: &Path) -> Result<Vec<PathBuf>> {
    let is_image = |p: &Path| {
        p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
    };
    if arg.is_dir() {
        let mut paths = Vec::new();
        for entry in std::fs::read_dir(arg).map_err(|e| Error::io(arg, e))? {
            let p = entry.map_err(|e| Error::io(arg, e))?.path();
            if p.is_file() && is_image(&p) {
                paths.push(p);
            }
        }
        paths.sort();
        return Ok(paths);
    }
    if is_image(arg) {
        return Ok(vec![arg.to_owned()]);
    }
    let text = std::fs::read_to_string(arg).map_err(|e| Error::io(arg, e))?;
    let base = arg.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = PathBuf::from(l);
            if p.is_relative() {
                base.join(p)
            } else {
                p
            }
        })
        .collect())
}

/// Fused metrics per task over a labelled set. Any unreadable image is a data error.
pub fn run_evaluate(bundle: &ModelBundle, labels_csv: &Path, images_dir: &Path) -> Result<[EvalReport; 2]> {
    let records = load_labels(labels_csv, images_dir)?;
    let preds: Vec<[(ProbVector, ClassId); 2]> = records
        .par_iter()
        .map(|r| predict_path(bundle, &r.path))
        .collect::<Result<_>>()?;
    let report = |task: TaskId| {
        let p: Vec<ProbVector> = preds.iter().map(|x| x[task.index()].0).collect();
        let y: Vec<ClassId> = records.iter().map(|r| task_label(r, task)).collect();
        evaluate(&p, &y)
    };
    Ok([report(TaskId::Task1)?, report(TaskId::Task2)?])
}

/// `task1.accuracy=…` style report for both tasks.
pub fn evaluation_text(reports: &[EvalReport; 2]) -> String {
    TaskId::ALL
        .iter()
        .map(|t| reports[t.index()].to_kv(&format!("{t}.")))
        .collect()
}

pub fn evaluation_csv(reports: &[EvalReport; 2]) -> String {
    let mut s = format!("task,{}\n", EvalReport::CSV_HEADER);
    for t in TaskId::ALL {
        let _ = writeln!(s, "{t},{}", reports[t.index()].to_csv_row());
    }
    s
}

/// Human-readable bundle summary.
pub fn describe(bundle: &ModelBundle) -> String {
    let m = &bundle.metadata;
    let mut s = String::new();
    let _ = writeln!(s, "format_version={FORMAT_VERSION}");
    let _ = writeln!(s, "seed={}", m.seed);
    let _ = writeln!(s, "dataset_hash={:08x}", m.dataset_hash);
    let _ = writeln!(s, "timestamp={}", m.timestamp);
    let _ = writeln!(
        s,
        "roi.margin_frac={}\nroi.invert_foreground={}\nroi.median_filter={}",
        m.roi.margin_frac, m.roi.invert_foreground, m.roi.median_filter
    );
    let _ = writeln!(s, "layout.hash={:08x}", crc32fast::hash(&bundle.layout.to_bytes()));
    for (name, offset, len) in &bundle.layout.0 {
        let _ = writeln!(s, "layout.{name}={offset}+{len}");
    }
    for t in TaskId::ALL {
        let tm = bundle.task(t);
        let _ = writeln!(s, "{t}.images={}", m.n_images[t.index()]);
        let _ = writeln!(s, "{t}.fusion_weight={}", tm.weights.w());
        let _ = writeln!(s, "{t}.forest.trees={}", tm.forest.trees().len());
        let _ = writeln!(s, "{t}.forest.train_rows={}", tm.forest.n_train());
        let _ = writeln!(s, "{t}.cnn.input_side={}", tm.cnn.input_side());
        let _ = writeln!(s, "{t}.cnn.layers={}", tm.cnn.layers().len());
        let _ = writeln!(s, "{t}.cnn.parameters={}", tm.cnn.param_count());
    }
    s
}
