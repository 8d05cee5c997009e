use super::Dataset;
use crate::{Error, Result};

/// `1 − Σ (cᵢ/n)²`.
pub fn gini_impurity(counts: [u32; 2]) -> Result<f64> {
    let n = counts[0] as f64 + counts[1] as f64;
    if n == 0.0 {
        return Err(Error::InvalidInput("gini impurity of an empty node".into()));
    }
    let (a, b) = (counts[0] as f64 / n, counts[1] as f64 / n);
    Ok(1.0 - (a * a + b * b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    /// Rows with `x[feature] <= threshold` go left.
    pub threshold: f64,
    /// Parent Gini minus size-weighted child Gini.
    pub gain: f64,
}

/// Σ cᵢ² for a two-class count pair.
#[inline]
fn sq(c: [u64; 2]) -> u128 {
    (c[0] * c[0] + c[1] * c[1]) as u128
}

/// Child purity `Σ cₗ²/nₗ + Σ cᵣ²/nᵣ` as an exact fraction. Maximising it is
/// the same as maximising the Gini decrease, and exact comparison keeps the
/// tie-breaking rule independent of rounding.
#[derive(Clone, Copy)]
struct Purity {
    num: u128,
    den: u128,
}

impl Purity {
    fn of(left: [u64; 2], right: [u64; 2]) -> Self {
        let nl = (left[0] + left[1]) as u128;
        let nr = (right[0] + right[1]) as u128;
        Purity {
            num: sq(left) * nr + sq(right) * nl,
            den: nl * nr,
        }
    }

    fn gt(self, other: Purity) -> bool {
        self.num * other.den > other.num * self.den
    }
}

fn weighted_gain(parent: [u64; 2], left: [u64; 2], right: [u64; 2]) -> f64 {
    let g = |c: [u64; 2]| gini_impurity([c[0] as u32, c[1] as u32]).unwrap_or(0.0);
    let n = (parent[0] + parent[1]) as f64;
    let nl = (left[0] + left[1]) as f64;
    let nr = (right[0] + right[1]) as f64;
    g(parent) - (nl / n) * g(left) - (nr / n) * g(right)
}

/// Exhaustive CART search over `features` for the rows in `idx`.
///
/// Candidate thresholds are midpoints between consecutive distinct values.
/// Returns the split with the largest impurity decrease, ties going to the
/// lower feature index and then the lower threshold; `None` if nothing gives
/// a strictly positive decrease. Both children must keep `min_leaf` rows.
pub fn best_split(data: &Dataset, idx: &[usize], features: &[usize], min_leaf: usize) -> Option<Split> {
    let n = idx.len();
    if n < 2 {
        return None;
    }
    let min_leaf = min_leaf.max(1);
    let mut parent = [0u64; 2];
    for &i in idx {
        parent[data.label(i).index()] += 1;
    }
    if parent.contains(&0) {
        return None;
    }
    // Positive gain ⇔ child purity > Σ pᵢ²/n.
    let baseline = Purity {
        num: sq(parent),
        den: n as u128,
    };

    let mut order: Vec<usize> = features.to_vec();
    order.sort_unstable();
    order.dedup();

    let mut best: Option<(Purity, usize, f64, [u64; 2])> = None;
    let mut column: Vec<(f64, usize)> = Vec::with_capacity(n);
    for &f in &order {
        column.clear();
        column.extend(idx.iter().map(|&i| (data.value(i, f), data.label(i).index())));
        column.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        if column[0].0 == column[n - 1].0 {
            continue;
        }
        let mut left = [0u64; 2];
        for k in 0..n - 1 {
            left[column[k].1] += 1;
            let (lo, hi) = (column[k].0, column[k + 1].0);
            if lo == hi || k + 1 < min_leaf || n - k - 1 < min_leaf {
                continue;
            }
            let right = [parent[0] - left[0], parent[1] - left[1]];
            let score = Purity::of(left, right);
            if !score.gt(baseline) {
                continue;
            }
            if best.as_ref().is_none_or(|b| score.gt(b.0)) {
                let mid = 0.5 * lo + 0.5 * hi;
                let threshold = if mid < hi { mid } else { lo };
                best = Some((score, f, threshold, left));
            }
        }
    }
    best.map(|(_, feature, threshold, left)| Split {
        feature,
        threshold,
        gain: weighted_gain(parent, left, [parent[0] - left[0], parent[1] - left[1]]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ClassId::{Negative as N, Positive as P};

    #[test]
    fn gini_examples() {
        assert_eq!(gini_impurity([4, 0]).unwrap(), 0.0);
        assert_eq!(gini_impurity([2, 2]).unwrap(), 0.5);
        assert_eq!(gini_impurity([1, 3]).unwrap(), 0.375);
        assert!(gini_impurity([0, 0]).is_err());
    }

    #[test]
    fn one_dimensional_split() {
        let d = Dataset::from_rows(&[vec![1.0], vec![2.0], vec![9.0], vec![10.0]], vec![N, N, P, P]).unwrap();
        let s = best_split(&d, &[0, 1, 2, 3], &[0], 1).unwrap();
        assert_eq!((s.feature, s.threshold, s.gain), (0, 5.5, 0.5));
    }

    #[test]
    fn no_split_cases() {
        let pure = Dataset::from_rows(&[vec![1.0], vec![2.0]], vec![P, P]).unwrap();
        assert!(best_split(&pure, &[0, 1], &[0], 1).is_none());
        let flat = Dataset::from_rows(&[vec![3.0], vec![3.0], vec![3.0]], vec![N, P, N]).unwrap();
        assert!(best_split(&flat, &[0, 1, 2], &[0], 1).is_none());
    }

    #[test]
    fn ties_prefer_lower_feature_then_threshold() {
        // Feature 0 and 1 are identical copies; both thresholds 1.5 and 2.5 get the same gain on feature 2.
        let rows = vec![vec![1.0, 1.0, 1.0], vec![2.0, 2.0, 2.0], vec![3.0, 3.0, 3.0], vec![4.0, 4.0, 4.0]];
        let d = Dataset::from_rows(&rows, vec![N, N, P, P]).unwrap();
        let s = best_split(&d, &[0, 1, 2, 3], &[1, 0], 1).unwrap();
        assert_eq!((s.feature, s.threshold), (0, 2.5));
        let d = Dataset::from_rows(&[vec![1.0], vec![2.0], vec![3.0]], vec![N, P, N]).unwrap();
        let s = best_split(&d, &[0, 1, 2], &[0], 1).unwrap();
        assert_eq!(s.threshold, 1.5);
    }

    #[test]
    fn min_leaf_blocks_small_children() {
        let d = Dataset::from_rows(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]], vec![N, P, P, P]).unwrap();
        assert_eq!(best_split(&d, &[0, 1, 2, 3], &[0], 1).unwrap().threshold, 1.5);
        assert_eq!(best_split(&d, &[0, 1, 2, 3], &[0], 2).unwrap().threshold, 2.5);
        assert!(best_split(&d, &[0, 1, 2, 3], &[0], 3).is_none());
    }

    #[test]
    fn adjacent_floats_threshold_partitions() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let d = Dataset::from_rows(&[vec![a], vec![b]], vec![N, P]).unwrap();
        let s = best_split(&d, &[0, 1], &[0], 1).unwrap();
        assert!(a <= s.threshold && s.threshold < b);
    }
}
