//! Bagged CART ensemble (Breiman-style random forest) for binary labels.
//!
//! Tree `t` is grown on a bootstrap of the training rows using ChaCha stream
//! `t` of the forest seed, so the trained model is bit-identical no matter how
//! many worker threads build it. The same streams regenerate bootstrap
//! membership for the out-of-bag estimate, so it never has to be stored.

mod oob;
mod split;
mod tree;

pub use oob::{oob_error, OobEstimate};
pub use split::{best_split, gini_impurity, Split};
pub use tree::{grow_tree, TreeNode};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::features::{FeatureLayout, FeatureVector};
use crate::{rng, ClassId, Error, ProbVector, Result};

/// How per-tree outputs are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vote {
    /// Mean of normalised leaf class counts.
    #[default]
    Mean,
    /// Fraction of trees whose leaf majority is positive.
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means ⌊√d⌋.
    pub mtry: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub seed: u64,
    pub vote: Vote,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 200,
            mtry: None,
            max_depth: None,
            min_samples_leaf: 1,
            seed: 0,
            vote: Vote::Mean,
        }
    }
}

impl ForestParams {
    /// Features per split for a `dim`-wide dataset.
    pub fn effective_mtry(&self, dim: usize) -> Result<usize> {
        let m = self.mtry.unwrap_or_else(|| ((dim as f64).sqrt().floor() as usize).max(1));
        if m == 0 || m > dim {
            return Err(Error::InvalidInput(format!("mtry {m} outside 1..={dim}")));
        }
        Ok(m)
    }

    fn validate(&self, dim: usize) -> Result<usize> {
        if self.n_trees == 0 {
            return Err(Error::InvalidInput("n_trees must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidInput("min_samples_leaf must be at least 1".into()));
        }
        self.effective_mtry(dim)
    }
}

/// Row-major training matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    dim: usize,
    labels: Vec<ClassId>,
    layout_hash: u32,
}

impl Dataset {
    /// Rows all tagged with a [`FeatureLayout::raw`] layout.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<ClassId>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        Self::build(rows.iter().map(Vec::as_slice), dim, labels, FeatureLayout::raw(dim).hash())
    }

    pub fn from_vectors(rows: &[FeatureVector], labels: Vec<ClassId>) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Data("empty training set".into()))?;
        let hash = first.layout_hash();
        if let Some(bad) = rows.iter().find(|r| r.layout_hash() != hash) {
            return Err(Error::LayoutMismatch {
                expected: hash,
                found: bad.layout_hash(),
            });
        }
        Self::build(rows.iter().map(FeatureVector::values), first.len(), labels, hash)
    }

    fn build<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize, labels: Vec<ClassId>, layout_hash: u32) -> Result<Self> {
        let mut values = Vec::new();
        let mut n = 0;
        for r in rows {
            if r.len() != dim {
                return Err(Error::InvalidInput(format!("row {n} has {} features, expected {dim}", r.len())));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("row {n} has a non-finite feature")));
            }
            values.extend_from_slice(r);
            n += 1;
        }
        if n != labels.len() {
            return Err(Error::InvalidInput(format!("{n} rows but {} labels", labels.len())));
        }
        if n == 0 {
            return Err(Error::Data("empty training set".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidInput("rows have no features".into()));
        }
        Ok(Dataset {
            values,
            dim,
            labels,
            layout_hash,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn value(&self, i: usize, feature: usize) -> f64 {
        self.values[i * self.dim + feature]
    }

    pub fn label(&self, i: usize) -> ClassId {
        self.labels[i]
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn layout_hash(&self) -> u32 {
        self.layout_hash
    }

    pub(crate) fn class_counts(&self, idx: &[usize]) -> [u32; 2] {
        let mut c = [0u32; 2];
        for &i in idx {
            c[self.labels[i].index()] += 1;
        }
        c
    }
}

/// Trained ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<TreeNode>,
    params: ForestParams,
    dim: usize,
    layout_hash: u32,
    n_train: usize,
}

/// Row positions drawn (with replacement) for tree `t`.
pub(crate) fn bootstrap(rng: &mut rng::Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Trains `params.n_trees` trees, each on its own bootstrap sample.
pub fn train_forest(data: &Dataset, params: &ForestParams) -> Result<Forest> {
    let mtry = params.validate(data.dim())?;
    let counts = data.class_counts(&(0..data.len()).collect::<Vec<_>>());
    if counts.contains(&0) {
        return Err(Error::Data(format!(
            "forest needs both classes, got {} negative / {} positive",
            counts[0], counts[1]
        )));
    }
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(params.seed, t as u64);
            let idx = bootstrap(&mut rng, data.len());
            grow_tree(data, idx, mtry, params, &mut rng)
        })
        .collect();
    Ok(Forest {
        trees,
        params: params.clone(),
        dim: data.dim(),
        layout_hash: data.layout_hash(),
        n_train: data.len(),
    })
}

impl Forest {
    pub fn trees(&self) -> &[TreeNode] {
        &self.trees
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layout_hash(&self) -> u32 {
        self.layout_hash
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    /// Probability vector for `x`, which must come from the training layout.
    pub fn predict_proba(&self, x: &FeatureVector) -> Result<ProbVector> {
        if x.layout_hash() != self.layout_hash {
            return Err(Error::LayoutMismatch {
                expected: self.layout_hash,
                found: x.layout_hash(),
            });
        }
        self.predict_row(x.values())
    }

    /// Like [`Forest::predict_proba`] but only checks the dimension.
    pub fn predict_row(&self, row: &[f64]) -> Result<ProbVector> {
        if row.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "forest expects {} features, got {}",
                self.dim,
                row.len()
            )));
        }
        Ok(aggregate(self.trees.iter(), row, self.params.vote))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut w = Writer::new();
        w.u32(self.trees.len() as u32)
            .u64(p.mtry.map_or(0, |m| m as u64))
            .u64(p.max_depth.map_or(u64::MAX, |d| d as u64))
            .u64(p.min_samples_leaf as u64)
            .u64(p.seed)
            .u8(match p.vote {
                Vote::Mean => 0,
                Vote::Hard => 1,
            })
            .u32(self.dim as u32)
            .u32(self.layout_hash)
            .u64(self.n_train as u64);
        for t in &self.trees {
            t.encode(&mut w);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8], section: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, section);
        let n_trees = r.u32()? as usize;
        let mtry = match r.u64()? {
            0 => None,
            m => Some(m as usize),
        };
        let max_depth = match r.u64()? {
            u64::MAX => None,
            d => Some(d as usize),
        };
        let min_samples_leaf = r.u64()? as usize;
        let seed = r.u64()?;
        let vote = match r.u8()? {
            0 => Vote::Mean,
            1 => Vote::Hard,
            v => return Err(Error::Model(format!("section `{section}`: unknown vote mode {v}"))),
        };
        let dim = r.u32()? as usize;
        let layout_hash = r.u32()?;
        let n_train = r.u64()? as usize;
        let params = ForestParams {
            n_trees,
            mtry,
            max_depth,
            min_samples_leaf,
            seed,
            vote,
        };
        params
            .validate(dim)
            .map_err(|e| Error::Model(format!("section `{section}`: {e}")))?;
        let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
        for _ in 0..n_trees {
            trees.push(TreeNode::decode(&mut r, dim)?);
        }
        r.finish()?;
        Ok(Forest {
            trees,
            params,
            dim,
            layout_hash,
            n_train,
        })
    }
}

pub(crate) fn aggregate<'a>(trees: impl Iterator<Item = &'a TreeNode>, row: &[f64], vote: Vote) -> ProbVector {
    let mut acc = [0.0f64; 2];
    let mut n = 0usize;
    for t in trees {
        let c = t.leaf_counts(row);
        match vote {
            Vote::Mean => {
                let total = (c[0] + c[1]) as f64;
                acc[0] += c[0] as f64 / total;
                acc[1] += c[1] as f64 / total;
            }
            Vote::Hard => acc[(c[1] > c[0]) as usize] += 1.0,
        }
        n += 1;
    }
    ProbVector::from_raw_unchecked([acc[0] / n as f64, acc[1] / n as f64])
}
