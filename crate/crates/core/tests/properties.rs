//! Property tests for features, forest, CNN and pipeline-level invariants.

use std::sync::OnceLock;

use lesionfuse::features::{final_feature_vector, glcm_compute, lbp_histogram, FEATURE_DIM, GLCM_LEVELS, GLCM_OFFSETS};
use lesionfuse::forest::{grow_tree, train_forest, Dataset, ForestParams, TreeNode};
use lesionfuse::imaging::{GrayImage, Image};
use lesionfuse::pipeline::{self, Config, ModelBundle, TaskId};
use lesionfuse::tinycnn::{softmax, CnnModel, CnnSpec, Tensor};
use lesionfuse::{rng, synthetic, ClassId};
use proptest::prelude::*;

fn gray(max_side: usize) -> impl Strategy<Value = GrayImage> {
    (1..=max_side, 1..=max_side)
        .prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(any::<u8>(), w * h)))
        .prop_map(|(w, h, data)| GrayImage::new(w, h, data).unwrap())
}

fn rgb(max_side: usize) -> impl Strategy<Value = Image> {
    (1..=max_side, 1..=max_side)
        .prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(any::<u8>(), w * h * 3)))
        .prop_map(|(w, h, data)| Image::new(w, h, data).unwrap())
}

/// Rows with a handful of informative columns and one constant column at index 0.
fn labelled_rows() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<ClassId>)> {
    (4usize..40, 2usize..6).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(prop::collection::vec(-100i32..100, d), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(|(rows, labels)| {
                let rows = rows
                    .into_iter()
                    .map(|r| std::iter::once(7.0).chain(r.into_iter().map(|v| v as f64 / 4.0)).collect())
                    .collect();
                (rows, labels.into_iter().map(ClassId::from_bool).collect())
            })
    })
}

/// Every split sends at least one of the node's rows each way, and never splits a constant column.
fn check_splits(node: &TreeNode, data: &Dataset, idx: &[usize]) -> Result<(), TestCaseError> {
    if let TreeNode::Split {
        feature,
        threshold,
        left,
        right,
    } = node
    {
        let f = *feature as usize;
        prop_assert_ne!(f, 0, "constant column selected");
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| data.value(i, f) <= *threshold);
        prop_assert!(!l.is_empty() && !r.is_empty());
        check_splits(left, data, &l)?;
        check_splits(right, data, &r)?;
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn glcm_matches_pair_enumeration(g in gray(8), k in 0usize..4) {
        let (dx, dy) = GLCM_OFFSETS[k];
        let (w, h) = (g.width() as isize, g.height() as isize);
        prop_assume!(w > dx.abs() && h > dy.abs());
        let mut counts = vec![0u64; GLCM_LEVELS * GLCM_LEVELS];
        let mut pairs = 0u64;
        for y in 0..h {
            for x in 0..w {
                let (x2, y2) = (x + dx, y + dy);
                if (0..w).contains(&x2) && (0..h).contains(&y2) {
                    let a = g.get(x as usize, y as usize) as usize / 16;
                    let b = g.get(x2 as usize, y2 as usize) as usize / 16;
                    counts[a * GLCM_LEVELS + b] += 1;
                    counts[b * GLCM_LEVELS + a] += 1;
                    pairs += 2;
                }
            }
        }
        let m = glcm_compute(&g, (dx, dy)).unwrap();
        for (i, &c) in counts.iter().enumerate() {
            prop_assert_eq!(m.table()[i], c as f64 / pairs as f64);
        }
        for i in 0..GLCM_LEVELS {
            for j in 0..GLCM_LEVELS {
                prop_assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
        prop_assert!((m.table().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lbp_matches_neighbour_comparisons(g in gray(6)) {
        let (w, h) = (g.width(), g.height());
        let hist = lbp_histogram(&g);
        prop_assert_eq!(hist.len(), 256);
        if w < 3 || h < 3 {
            prop_assert!(hist.iter().all(|&v| v == 0.0));
            return Ok(());
        }
        let ring = [(0, 0), (1, 0), (2, 0), (2, 1), (2, 2), (1, 2), (0, 2), (0, 1)];
        let mut counts = [0u32; 256];
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let c = g.get(x, y);
                let mut code = 0usize;
                for (bit, &(ox, oy)) in ring.iter().enumerate() {
                    if g.get(x + ox - 1, y + oy - 1) >= c {
                        code |= 1 << (7 - bit);
                    }
                }
                counts[code] += 1;
            }
        }
        let total = ((w - 2) * (h - 2)) as f64;
        for (i, &c) in counts.iter().enumerate() {
            prop_assert_eq!(hist[i], c as f64 / total);
        }
    }

    #[test]
    fn feature_vector_is_fixed_width_and_finite(img in rgb(24)) {
        let v = final_feature_vector(&img);
        prop_assert_eq!(v.len(), FEATURE_DIM);
        prop_assert!(v.values().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn forest_probabilities_are_distributions(
        (rows, labels) in labelled_rows(),
        seed in any::<u64>(),
        probe in prop::collection::vec(-30.0f64..30.0, 6),
    ) {
        prop_assume!(labels.iter().any(|&c| c == ClassId::Positive) && labels.iter().any(|&c| c == ClassId::Negative));
        let data = Dataset::from_rows(&rows, labels).unwrap();
        let params = ForestParams { n_trees: 7, seed, ..ForestParams::default() };
        let forest = train_forest(&data, &params).unwrap();
        let row = &probe[..data.dim()];
        let p = forest.predict_row(row).unwrap();
        prop_assert!((0.0..=1.0).contains(&p.negative()) && (0.0..=1.0).contains(&p.positive()));
        prop_assert!((p.negative() + p.positive() - 1.0).abs() < 1e-9);
        for tree in forest.trees() {
            // Bootstrap rows are a subset of the full set, so its partitions are non-empty too.
            check_splits(tree, &data, &(0..data.len()).collect::<Vec<_>>())?;
        }
    }

    #[test]
    fn unlimited_tree_fits_its_bootstrap((rows, labels) in labelled_rows(), seed in any::<u64>()) {
        let mut seen = std::collections::HashSet::new();
        prop_assume!(rows.iter().all(|r| seen.insert(r.iter().map(|v| v.to_bits()).collect::<Vec<_>>())));
        let data = Dataset::from_rows(&rows, labels).unwrap();
        let mut r = rng::stream(seed, 0);
        let idx: Vec<usize> = (0..data.len()).map(|_| rand::Rng::random_range(&mut r, 0..data.len())).collect();
        let params = ForestParams::default();
        let mtry = params.effective_mtry(data.dim()).unwrap();
        let tree = grow_tree(&data, idx.clone(), mtry, &params, &mut r);
        check_splits(&tree, &data, &{ let mut u = idx.clone(); u.sort(); u.dedup(); u })?;
        for &i in &idx {
            let c = tree.leaf_counts(data.row(i));
            let predicted = if c[1] > c[0] { ClassId::Positive } else { ClassId::Negative };
            prop_assert_eq!(c[0].min(c[1]), 0, "leaf is impure");
            prop_assert_eq!(predicted, data.label(i));
        }
    }

    #[test]
    fn softmax_is_a_distribution(a in -1e3f64..1e3, b in -1e3f64..1e3) {
        let p = softmax([a, b]).unwrap();
        prop_assert!(p.negative() >= 0.0 && p.positive() >= 0.0);
        prop_assert!((p.negative() + p.positive() - 1.0).abs() < 1e-9);
        prop_assert_eq!(p.positive() > 0.5, b > a);
    }
}

#[test]
fn cnn_forward_ignores_thread_count() {
    let spec = CnnSpec {
        input_side: 16,
        ..CnnSpec::default()
    };
    let model = CnnModel::he_uniform(&spec, 11).unwrap();
    let img = synthetic::synth_image(16, true, 4).unwrap();
    let x = Tensor::from_image(&img, 16).unwrap();
    let one = pipeline::with_threads(1, || model.forward(&x)).unwrap().unwrap();
    let many = pipeline::with_threads(4, || model.forward(&x)).unwrap().unwrap();
    assert_eq!(one.as_array().map(f64::to_bits), many.as_array().map(f64::to_bits));
}

struct Trained {
    _dir: tempfile::TempDir,
    bench: synthetic::Benchmark,
    base: Vec<String>,
    bundle: ModelBundle,
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let bench = synthetic::write_benchmark(dir.path(), 8, 48, 21).unwrap();
        let base: Vec<String> = ["cnn.epochs=1", "forest.n_trees=12", "cnn.input_side=16"].map(String::from).to_vec();
        let cfg = Config::load(&bench.config, &base).unwrap();
        let bundle = pipeline::run_train(&cfg).unwrap().bundle;
        Trained {
            _dir: dir,
            bench,
            base,
            bundle,
        }
    })
}

#[test]
fn bundle_file_round_trips() {
    let t = trained();
    let path = t.bench.root.join("model.lfsb");
    let loaded = pipeline::load_bundle(&path).unwrap();
    assert_eq!(loaded.to_bytes(), t.bundle.to_bytes());
    assert_eq!(ModelBundle::from_bytes(&loaded.to_bytes()).unwrap().to_bytes(), loaded.to_bytes());
}

#[test]
fn retraining_task2_leaves_task1_untouched() {
    let t = trained();
    // Flip every task-2 label; task 1 keeps its data and seeds.
    let text = std::fs::read_to_string(&t.bench.labels[1]).unwrap();
    let mut flipped = String::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            flipped.push_str(line);
        } else {
            let (id, rest) = line.split_once(',').unwrap();
            let sk = if rest.ends_with('1') { 0 } else { 1 };
            flipped.push_str(&format!("{id},0,{sk}"));
        }
        flipped.push('\n');
    }
    let alt = t.bench.root.join("task2_flipped.csv");
    std::fs::write(&alt, flipped).unwrap();
    let mut overrides = t.base.clone();
    overrides.push(format!("task2.labels=\"{}\"", alt.display()));
    overrides.push(format!("output=\"{}\"", t.bench.root.join("alt.lfsb").display()));
    let cfg = Config::load(&t.bench.config, &overrides).unwrap();
    let alt_bundle = pipeline::train_bundle(&cfg).unwrap().bundle;
    let (a, b) = (t.bundle.task(TaskId::Task1), alt_bundle.task(TaskId::Task1));
    assert_eq!(a.forest.to_bytes(), b.forest.to_bytes());
    assert_eq!(a.cnn.to_bytes(), b.cnn.to_bytes());
    assert_eq!(a.weights, b.weights);
    assert_ne!(
        t.bundle.task(TaskId::Task2).forest.to_bytes(),
        alt_bundle.task(TaskId::Task2).forest.to_bytes()
    );
}

#[test]
fn no_validation_split_uses_even_weight() {
    let t = trained();
    let mut overrides = t.base.clone();
    overrides.push("validation_fraction=0.0".into());
    let cfg = Config::load(&t.bench.config, &overrides).unwrap();
    let outcome = pipeline::train_bundle(&cfg).unwrap();
    for m in &outcome.metrics {
        assert_eq!(m.weights.w(), 0.5);
        assert!(m.validation.is_none());
        assert_eq!(m.n_validation, 0);
    }
}

#[test]
fn repeated_image_gives_identical_predictions() {
    let t = trained();
    let img = &t.bench.images[3];
    let a = pipeline::predict_path(&t.bundle, img).unwrap();
    let b = pipeline::predict_path(&t.bundle, img).unwrap();
    for k in 0..2 {
        assert_eq!(a[k].0.as_array().map(f64::to_bits), b[k].0.as_array().map(f64::to_bits));
        assert_eq!(a[k].1, b[k].1);
    }
}
