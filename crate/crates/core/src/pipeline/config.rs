//! Training configuration: a TOML file plus `key=value` overrides.
//!
//! ```toml
//! labels = "labels.csv"          # image_id,melanoma,seborrheic_keratosis
//! images_dir = "images"
//! output = "model.lfsb"
//! seed = 42
//! validation_fraction = 0.2      # stratified per task; 0 disables tuning
//! threads = 0                    # 0 = all cores
//!
//! [task2]
//! labels = "sk_labels.csv"       # optional per-task ground truth
//!
//! [forest]
//! n_trees = 200
//!
//! [cnn]
//! input_side = 256
//! epochs = 30
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::forest::Vote;
use crate::roi::RoiConfig;
use crate::tinycnn::{CnnSpec, PatchAggregate, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSection {
    pub n_trees: usize,
    pub mtry: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub vote: Vote,
}

impl Default for ForestSection {
    fn default() -> Self {
        ForestSection {
            n_trees: 200,
            mtry: None,
            max_depth: None,
            min_samples_leaf: 1,
            vote: Vote::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnSection {
    pub input_side: usize,
    pub blocks: Vec<usize>,
    pub aggregate: PatchAggregate,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for CnnSection {
    fn default() -> Self {
        let spec = CnnSpec::default();
        let train = TrainConfig::default();
        CnnSection {
            input_side: spec.input_side,
            blocks: spec.blocks,
            aggregate: spec.aggregate,
            learning_rate: train.learning_rate,
            momentum: train.momentum,
            batch_size: train.batch_size,
            epochs: train.epochs,
        }
    }
}

impl CnnSection {
    pub fn spec(&self) -> CnnSpec {
        CnnSpec {
            input_side: self.input_side,
            blocks: self.blocks.clone(),
            aggregate: self.aggregate,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    /// Skip validation tuning and use this weight on the CNN branch.
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    /// Ground truth for this task only; falls back to the top-level `labels`.
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub labels: Option<PathBuf>,
    pub images_dir: PathBuf,
    pub output: PathBuf,
    pub seed: u64,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub threads: usize,
    /// Written into the bundle metadata; fixed by default so bundles are reproducible.
    #[serde(default)]
    pub timestamp: u64,
    #[serde(default = "default_true")]
    pub augment: bool,
    /// Write `<output>.<task>.loss.csv` training curves next to the bundle.
    #[serde(default)]
    pub loss_history: bool,
    #[serde(default)]
    pub task1: TaskSection,
    #[serde(default)]
    pub task2: TaskSection,
    #[serde(default)]
    pub roi: RoiConfig,
    #[serde(default)]
    pub forest: ForestSection,
    #[serde(default)]
    pub cnn: CnnSection,
    #[serde(default)]
    pub fusion: FusionSection,
}

fn default_validation_fraction() -> f64 {
    0.2
}

fn default_true() -> bool {
    true
}

/// Parses `text` as a TOML scalar, falling back to a bare string.
fn override_value(text: &str) -> toml::Value {
    let doc = format!("v = {text}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(text.to_owned()),
    }
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), override_value(value.trim()));
    Ok(())
}

impl Config {
    /// Parses TOML text, applies overrides, and resolves relative paths against `base`.
    pub fn parse(text: &str, overrides: &[String], base: &Path) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, overrides, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.images_dir);
        fix(&mut self.output);
        for p in [&mut self.labels, &mut self.task1.labels, &mut self.task2.labels]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation_fraction {} outside [0, 1)", self.validation_fraction));
        }
        if let Some(w) = self.fusion.weight {
            if !(0.0..=1.0).contains(&w) {
                return bad(format!("fusion.weight {w} outside [0, 1]"));
            }
        }
        if !(self.roi.margin_frac >= 0.0 && self.roi.margin_frac.is_finite()) {
            return bad(format!("roi.margin_frac {}", self.roi.margin_frac));
        }
        if !(self.cnn.learning_rate > 0.0 && self.cnn.learning_rate.is_finite()) {
            return bad(format!("cnn.learning_rate must be positive, got {}", self.cnn.learning_rate));
        }
        if self.cnn.batch_size == 0 || self.cnn.epochs == 0 || self.forest.n_trees == 0 {
            return bad("cnn.batch_size, cnn.epochs and forest.n_trees must be at least 1".into());
        }
        self.cnn.spec().layers().map_err(|e| Error::Config(format!("cnn: {e}")))?;
        for task in crate::pipeline::TaskId::ALL {
            if self.labels_for(task).is_none() {
                return bad(format!("no label CSV for {task}: set `labels` or `{task}.labels`"));
            }
        }
        Ok(())
    }

    pub fn labels_for(&self, task: crate::pipeline::TaskId) -> Option<&Path> {
        let section = match task {
            crate::pipeline::TaskId::Task1 => &self.task1,
            crate::pipeline::TaskId::Task2 => &self.task2,
        };
        section.labels.as_deref().or(self.labels.as_deref())
    }
}
