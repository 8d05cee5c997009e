use rand::seq::index::sample;

use super::{best_split, Dataset, ForestParams};
use crate::codec::{Reader, Writer};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: u32,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        counts: [u32; 2],
    },
}

/// Guards decoding against corrupt files that would otherwise recurse forever.
const MAX_DECODE_DEPTH: usize = 4096;

/// Grows one CART tree on the rows in `idx` (duplicates allowed).
///
/// Each node draws `mtry` distinct features from `rng`. If none of them admits
/// a positive-gain split, the remaining features are scanned before the node
/// becomes a leaf.
pub fn grow_tree(data: &Dataset, idx: Vec<usize>, mtry: usize, params: &ForestParams, rng: &mut rng::Rng) -> TreeNode {
    grow(data, idx, mtry, params, rng, 0)
}

fn grow(data: &Dataset, idx: Vec<usize>, mtry: usize, params: &ForestParams, rng: &mut rng::Rng, depth: usize) -> TreeNode {
    let counts = data.class_counts(&idx);
    let leaf = TreeNode::Leaf { counts };
    let min_leaf = params.min_samples_leaf.max(1);
    if counts.contains(&0) || idx.len() < 2 * min_leaf || params.max_depth.is_some_and(|d| depth >= d) {
        return leaf;
    }

    let mut subset = sample(rng, data.dim(), mtry.min(data.dim())).into_vec();
    subset.sort_unstable();
    let split = best_split(data, &idx, &subset, min_leaf).or_else(|| {
        let rest: Vec<usize> = (0..data.dim()).filter(|f| subset.binary_search(f).is_err()).collect();
        best_split(data, &idx, &rest, min_leaf)
    });
    let Some(split) = split else {
        return leaf;
    };

    let (left, right): (Vec<usize>, Vec<usize>) = idx
        .into_iter()
        .partition(|&i| data.value(i, split.feature) <= split.threshold);
    let left = grow(data, left, mtry, params, rng, depth + 1);
    let right = grow(data, right, mtry, params, rng, depth + 1);
    TreeNode::Split {
        feature: split.feature as u32,
        threshold: split.threshold,
        left: Box::new(left),
        right: Box::new(right),
    }
}

impl TreeNode {
    /// Class counts of the leaf that `row` reaches.
    pub fn leaf_counts(&self, row: &[f64]) -> [u32; 2] {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { counts } => return *counts,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row[*feature as usize] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Visits every node in pre-order.
    pub fn visit(&self, f: &mut impl FnMut(&TreeNode)) {
        f(self);
        if let TreeNode::Split { left, right, .. } = self {
            left.visit(f);
            right.visit(f);
        }
    }

    /// Pre-order records: tag 0 = split (u32 feature, f64 threshold),
    /// tag 1 = leaf (two u32 counts).
    pub(crate) fn encode(&self, w: &mut Writer) {
        match self {
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                w.u8(0).u32(*feature).f64(*threshold);
                left.encode(w);
                right.encode(w);
            }
            TreeNode::Leaf { counts } => {
                w.u8(1).u32(counts[0]).u32(counts[1]);
            }
        }
    }

    pub(crate) fn decode(r: &mut Reader<'_>, dim: usize) -> Result<Self> {
        Self::decode_at(r, dim, 0)
    }

    fn decode_at(r: &mut Reader<'_>, dim: usize, depth: usize) -> Result<Self> {
        let section = r.section().to_owned();
        let bad = |what: String| Error::Model(format!("section `{section}`: {what}"));
        if depth > MAX_DECODE_DEPTH {
            return Err(bad("tree deeper than the decoder allows".into()));
        }
        match r.u8()? {
            0 => {
                let feature = r.u32()?;
                let threshold = r.f64()?;
                if feature as usize >= dim || !threshold.is_finite() {
                    return Err(bad(format!("invalid split on feature {feature}")));
                }
                let left = Box::new(Self::decode_at(r, dim, depth + 1)?);
                let right = Box::new(Self::decode_at(r, dim, depth + 1)?);
                Ok(TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                })
            }
            1 => {
                let counts = [r.u32()?, r.u32()?];
                if counts == [0, 0] {
                    return Err(bad("empty leaf".into()));
                }
                Ok(TreeNode::Leaf { counts })
            }
            tag => Err(bad(format!("unknown node tag {tag}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ClassId::{Negative as N, Positive as P};

    #[test]
    fn single_sample_leaf() {
        let d = Dataset::from_rows(&[vec![0.3, 0.1]], vec![P]).unwrap();
        let t = grow_tree(&d, vec![0], 1, &ForestParams::default(), &mut rng::stream(1, 0));
        assert_eq!(t, TreeNode::Leaf { counts: [0, 1] });
    }

    #[test]
    fn one_d_depth_one() {
        let d = Dataset::from_rows(&[vec![1.0], vec![2.0], vec![9.0], vec![10.0]], vec![N, N, P, P]).unwrap();
        let t = grow_tree(&d, vec![0, 1, 2, 3], 1, &ForestParams::default(), &mut rng::stream(1, 0));
        assert_eq!(
            t,
            TreeNode::Split {
                feature: 0,
                threshold: 5.5,
                left: Box::new(TreeNode::Leaf { counts: [2, 0] }),
                right: Box::new(TreeNode::Leaf { counts: [0, 2] }),
            }
        );
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn depth_limit_respected() {
        let rows: Vec<Vec<f64>> = (0..16).map(|i| vec![i as f64]).collect();
        let labels = (0..16).map(|i| if i % 2 == 0 { N } else { P }).collect();
        let d = Dataset::from_rows(&rows, labels).unwrap();
        let p = ForestParams { max_depth: Some(2), ..Default::default() };
        let t = grow_tree(&d, (0..16).collect(), 1, &p, &mut rng::stream(1, 0));
        assert!(t.depth() <= 2);
        let t = grow_tree(&d, (0..16).collect(), 1, &ForestParams::default(), &mut rng::stream(1, 0));
        for i in 0..16 {
            let c = t.leaf_counts(d.row(i));
            assert_eq!(c[d.label(i).index()], c[0] + c[1]);
        }
    }

    #[test]
    fn falls_back_to_unsampled_features() {
        // Only feature 3 is informative; with mtry = 1 most draws miss it.
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![0.0, 0.0, 0.0, i as f64]).collect();
        let labels = (0..8).map(|i| if i < 4 { N } else { P }).collect();
        let d = Dataset::from_rows(&rows, labels).unwrap();
        for s in 0..10 {
            let t = grow_tree(&d, (0..8).collect(), 1, &ForestParams::default(), &mut rng::stream(s, 0));
            assert!(matches!(t, TreeNode::Split { feature: 3, .. }));
        }
    }
}
