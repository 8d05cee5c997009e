use super::{aggregate, bootstrap, Dataset, Forest};
use crate::{rng, ClassId, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OobEstimate {
    /// Misclassification rate over samples with at least one out-of-bag tree.
    pub error: f64,
    /// Fraction of samples with at least one out-of-bag tree.
    pub coverage: f64,
    /// Mean over samples of the fraction of trees whose bootstrap missed them.
    pub mean_oob_tree_fraction: f64,
    pub n_evaluated: usize,
}

/// Out-of-bag error of `forest` on the data it was trained on.
///
/// Bootstrap membership is regenerated from the per-tree streams, so `data`
/// must be the exact training sequence.
pub fn oob_error(forest: &Forest, data: &Dataset) -> Result<OobEstimate> {
    let n = data.len();
    if n != forest.n_train() || data.dim() != forest.dim() || data.layout_hash() != forest.layout_hash() {
        return Err(Error::InvalidInput(format!(
            "OOB needs the training data ({} rows x {}), got {} x {}",
            forest.n_train(),
            forest.dim(),
            n,
            data.dim()
        )));
    }
    let mut out_of_bag: Vec<Vec<usize>> = vec![Vec::new(); n];
    for t in 0..forest.trees().len() {
        let mut rng = rng::stream(forest.params().seed, t as u64);
        let mut in_bag = vec![false; n];
        for i in bootstrap(&mut rng, n) {
            in_bag[i] = true;
        }
        for (i, _) in in_bag.iter().enumerate().filter(|(_, &b)| !b) {
            out_of_bag[i].push(t);
        }
    }

    let n_trees = forest.trees().len() as f64;
    let mut wrong = 0usize;
    let mut evaluated = 0usize;
    for (i, trees) in out_of_bag.iter().enumerate() {
        if trees.is_empty() {
            continue;
        }
        evaluated += 1;
        let p = aggregate(trees.iter().map(|&t| &forest.trees()[t]), data.row(i), forest.params().vote);
        if ClassId::from_bool(p.positive() > 0.5) != data.label(i) {
            wrong += 1;
        }
    }
    if evaluated == 0 {
        return Err(Error::InvalidInput("no sample has an out-of-bag tree".into()));
    }
    Ok(OobEstimate {
        error: wrong as f64 / evaluated as f64,
        coverage: evaluated as f64 / n as f64,
        mean_oob_tree_fraction: out_of_bag.iter().map(|t| t.len() as f64 / n_trees).sum::<f64>() / n as f64,
        n_evaluated: evaluated,
    })
}
