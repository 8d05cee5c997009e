//! Late fusion of the two branch outputs, the 0.5 decision rule, and metrics.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{ClassId, Error, ProbVector, Result};

/// Weight on the CNN output; the forest gets `1 − w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    w: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        FusionWeights { w: 0.5 }
    }
}

impl FusionWeights {
    pub fn new(w: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::InvalidInput(format!("fusion weight {w} outside [0, 1]")));
        }
        Ok(FusionWeights { w })
    }

    pub fn w(&self) -> f64 {
        self.w
    }
}

/// `w·result1 + (1 − w)·result2`, componentwise.
pub fn fuse(result1: &ProbVector, result2: &ProbVector, weights: FusionWeights) -> ProbVector {
    let w = weights.w;
    // Boundary weights return the branch untouched rather than relying on 0·x + y.
    if w == 1.0 {
        return *result1;
    }
    if w == 0.0 {
        return *result2;
    }
    let (a, b) = (result1.as_array(), result2.as_array());
    ProbVector::from_raw_unchecked([w * a[0] + (1.0 - w) * b[0], w * a[1] + (1.0 - w) * b[1]])
}

/// Positive iff the positive-class probability is strictly larger than 0.5.
pub fn classify(p: &ProbVector) -> ClassId {
    ClassId::from_bool(p.positive() > 0.5)
}

/// Twice the Mann–Whitney U statistic: each (positive, negative) pair scores 2
/// if the positive ranks higher, 1 on a tie. Exact in integers.
fn doubled_u(scores: &[f64], labels: &[ClassId]) -> Result<(u128, u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite score {s}")));
    }
    let n_pos = labels.iter().filter(|&&l| l == ClassId::Positive).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of doubled midranks (1-based) of the positives.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank2 = (i + 1 + j + 1) as u128;
        let pos = order[i..=j].iter().filter(|&&k| labels[k] == ClassId::Positive).count() as u128;
        rank_sum2 += midrank2 * pos;
        i = j + 1;
    }
    let u2 = rank_sum2 - (n_pos as u128) * (n_pos as u128 + 1);
    Ok((u2, n_pos, n_neg))
}

/// Probability that a random positive outscores a random negative, ties 0.5.
pub fn auc(scores: &[f64], labels: &[ClassId]) -> Result<f64> {
    let (u2, p, n) = doubled_u(scores, labels)?;
    Ok(u2 as f64 / (2 * p as u128 * n as u128) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub fp: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.tn + self.fp
    }
}

/// Metrics for one task. Rates that need a class absent from the labels are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n: u64,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auc: Option<f64>,
}

pub const NOT_APPLICABLE: &str = "n/a";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NOT_APPLICABLE.to_owned(), |x| format!("{x:.6}"))
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "n,tp,fn,tn,fp,accuracy,sensitivity,specificity,auc";

    /// `key=value` lines, optionally prefixed (e.g. `task1.`).
    pub fn to_kv(&self, prefix: &str) -> String {
        let c = &self.confusion;
        [
            ("n", self.n.to_string()),
            ("tp", c.tp.to_string()),
            ("fn", c.fn_.to_string()),
            ("tn", c.tn.to_string()),
            ("fp", c.fp.to_string()),
            ("accuracy", format!("{:.6}", self.accuracy)),
            ("sensitivity", opt(self.sensitivity)),
            ("specificity", opt(self.specificity)),
            ("auc", opt(self.auc)),
        ]
        .iter()
        .map(|(k, v)| format!("{prefix}{k}={v}\n"))
        .collect()
    }

    pub fn to_csv_row(&self) -> String {
        let c = &self.confusion;
        format!(
            "{},{},{},{},{},{:.6},{},{},{}",
            self.n,
            c.tp,
            c.fn_,
            c.tn,
            c.fp,
            self.accuracy,
            opt(self.sensitivity),
            opt(self.specificity),
            opt(self.auc)
        )
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_kv(""))
    }
}

pub fn evaluate(preds: &[ProbVector], labels: &[ClassId]) -> Result<EvalReport> {
    if preds.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidInput("nothing to evaluate".into()));
    }
    let mut c = Confusion::default();
    for (p, &y) in preds.iter().zip(labels) {
        match (classify(p), y) {
            (ClassId::Positive, ClassId::Positive) => c.tp += 1,
            (ClassId::Negative, ClassId::Positive) => c.fn_ += 1,
            (ClassId::Negative, ClassId::Negative) => c.tn += 1,
            (ClassId::Positive, ClassId::Negative) => c.fp += 1,
        }
    }
    let ratio = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
    let scores: Vec<f64> = preds.iter().map(ProbVector::positive).collect();
    let both = c.tp + c.fn_ > 0 && c.tn + c.fp > 0;
    Ok(EvalReport {
        n: c.total(),
        accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        auc: if both { Some(auc(&scores, labels)?) } else { None },
        confusion: c,
    })
}

/// Grid weights `k/20`, `k = 0..=20`.
pub fn weight_grid() -> impl Iterator<Item = f64> {
    (0..=20).map(|k| k as f64 / 20.0)
}

/// Picks the grid weight with the highest fused validation AUC. Ties go to the
/// weight nearest 0.5, then the smaller weight.
pub fn tune_weight(preds1: &[ProbVector], preds2: &[ProbVector], labels: &[ClassId]) -> Result<FusionWeights> {
    if preds1.len() != labels.len() || preds2.len() != labels.len() {
        return Err(Error::InvalidInput("prediction and label counts differ".into()));
    }
    // Compare U statistics as integers so equal AUCs tie exactly.
    let mut best: Option<(u128, u32, f64)> = None;
    for (k, w) in (0u32..=20).zip(weight_grid()) {
        let weights = FusionWeights { w };
        let scores: Vec<f64> = preds1
            .iter()
            .zip(preds2)
            .map(|(a, b)| fuse(a, b, weights).positive())
            .collect();
        let (u2, ..) = doubled_u(&scores, labels)?;
        let dist = k.abs_diff(10);
        let better = match best {
            None => true,
            Some((bu, bd, _)) => u2 > bu || (u2 == bu && dist < bd),
        };
        if better {
            best = Some((u2, dist, w));
        }
    }
    Ok(FusionWeights { w: best.expect("grid is non-empty").2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ClassId::{Negative as N, Positive as P};

    fn pv(p1: f64) -> ProbVector {
        ProbVector::from_positive(p1).unwrap()
    }

    fn pair_oracle(scores: &[f64], labels: &[ClassId]) -> f64 {
        let mut total = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == P && labels[j] == N {
                    pairs += 1.0;
                    total += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                }
            }
        }
        total / pairs
    }

    #[test]
    fn fuse_examples() {
        let (a, b) = (ProbVector::new(0.8, 0.2).unwrap(), ProbVector::new(0.6, 0.4).unwrap());
        let m = fuse(&a, &b, FusionWeights::default());
        assert!((m[0] - 0.7).abs() < 1e-15 && (m[1] - 0.3).abs() < 1e-15);
        assert_eq!(fuse(&a, &b, FusionWeights::new(1.0).unwrap()), a);
        assert_eq!(fuse(&a, &b, FusionWeights::new(0.0).unwrap()), b);
        assert!(FusionWeights::new(1.5).is_err());
    }

    #[test]
    fn classify_boundary() {
        assert_eq!(classify(&pv(0.7)), P);
        assert_eq!(classify(&pv(0.5)), N);
        assert_eq!(classify(&pv(0.3)), N);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.4, 0.5, 0.1], &[P, P, N, N]).unwrap(), 0.75);
        assert_eq!(auc(&[0.3; 5], &[P, N, P, N, N]).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.8, 0.1], &[P, P, N]).unwrap(), 1.0);
        assert!(auc(&[0.1, 0.2], &[P, P]).is_err());
        assert!(auc(&[0.1, f64::NAN], &[P, N]).is_err());
        assert!(auc(&[0.1], &[P, N]).is_err());
    }

    #[test]
    fn evaluate_examples() {
        let r = evaluate(&[pv(0.9), pv(0.1), pv(0.2), pv(0.8)], &[P, P, N, N]).unwrap();
        assert_eq!(r.confusion, Confusion { tp: 1, fn_: 1, tn: 1, fp: 1 });
        assert_eq!((r.accuracy, r.sensitivity, r.specificity), (0.5, Some(0.5), Some(0.5)));

        let r = evaluate(&[pv(0.9), pv(0.2)], &[P, N]).unwrap();
        assert_eq!((r.accuracy, r.sensitivity, r.specificity, r.auc), (1.0, Some(1.0), Some(1.0), Some(1.0)));

        let r = evaluate(&[pv(0.9), pv(0.2)], &[P, P]).unwrap();
        assert_eq!((r.specificity, r.auc), (None, None));
        assert_eq!(r.confusion.total(), 2);
        assert!(r.to_kv("").contains("specificity=n/a\n"));
        assert!(r.to_csv_row().ends_with(",n/a,n/a"));
        assert!(evaluate(&[pv(0.9)], &[P, N]).is_err());
    }

    #[test]
    fn tune_weight_ties_and_boundary() {
        let labels = [P, N, P, N];
        let same = [pv(0.6), pv(0.4), pv(0.3), pv(0.7)];
        assert_eq!(tune_weight(&same, &same, &labels).unwrap().w(), 0.5);
        let perfect = [pv(0.9), pv(0.1), pv(0.8), pv(0.2)];
        assert_eq!(tune_weight(&perfect, &perfect, &labels).unwrap().w(), 0.5);
        assert!(tune_weight(&perfect, &perfect, &[P, P, P, P]).is_err());
    }

    /// Exhaustive grid scan with the tie rules written out directly.
    fn tune_oracle(a: &[ProbVector], b: &[ProbVector], labels: &[ClassId]) -> f64 {
        let aucs: Vec<(f64, f64)> = weight_grid()
            .map(|w| {
                let s: Vec<f64> = a.iter().zip(b).map(|(x, y)| w * x[1] + (1.0 - w) * y[1]).collect();
                (w, pair_oracle(&s, labels))
            })
            .collect();
        let top = aucs.iter().map(|x| x.1).fold(f64::MIN, f64::max);
        aucs.iter()
            .filter(|x| x.1 == top)
            .map(|x| x.0)
            .min_by(|x, y| ((x - 0.5).abs(), *x).partial_cmp(&((y - 0.5).abs(), *y)).unwrap())
            .unwrap()
    }

    #[test]
    fn perfect_cnn_with_noisy_forest_prefers_cnn() {
        // Forest scores are anti-correlated on two pairs, so any weight on
        // them costs AUC until the CNN's margin dominates.
        let labels = [P, P, P, N, N, N];
        let cnn = [pv(0.52), pv(0.51), pv(0.53), pv(0.49), pv(0.48), pv(0.47)];
        let forest = [pv(0.1), pv(0.9), pv(0.2), pv(0.95), pv(0.05), pv(0.8)];
        let w = tune_weight(&cnn, &forest, &labels).unwrap().w();
        assert_eq!(w, tune_oracle(&cnn, &forest, &labels));
        assert_eq!(w, 1.0);
    }

    proptest! {
        #[test]
        fn auc_matches_pair_oracle(v in prop::collection::vec((0u8..12, any::<bool>()), 2..50)) {
            let mut labels: Vec<ClassId> = v.iter().map(|x| ClassId::from_bool(x.1)).collect();
            labels[0] = P;
            labels[1] = N;
            let scores: Vec<f64> = v.iter().map(|x| x.0 as f64 / 11.0).collect();
            prop_assert_eq!(auc(&scores, &labels).unwrap(), pair_oracle(&scores, &labels));
        }

        #[test]
        fn auc_monotone_invariant(v in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..50), a in 0.1f64..3.0, b in -2.0f64..2.0) {
            let mut labels: Vec<ClassId> = v.iter().map(|x| ClassId::from_bool(x.1)).collect();
            labels[0] = P;
            labels[1] = N;
            let scores: Vec<f64> = v.iter().map(|x| (x.0 * 4.0).round() / 4.0).collect();
            let mapped: Vec<f64> = scores.iter().map(|s| (a * s + b).exp()).collect();
            prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&mapped, &labels).unwrap());
        }

        #[test]
        fn fuse_stays_on_simplex(p in 0.0f64..=1.0, q in 0.0f64..=1.0, w in 0.0f64..=1.0) {
            let f = fuse(&pv(p), &pv(q), FusionWeights::new(w).unwrap());
            prop_assert!((f[0] + f[1] - 1.0).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&f[0]) && (0.0..=1.0).contains(&f[1]));
        }

        #[test]
        fn fusing_identical_inputs_keeps_class(p in 0.0f64..=1.0, w in 0.0f64..=1.0) {
            let x = pv(p);
            prop_assert_eq!(classify(&fuse(&x, &x, FusionWeights::new(w).unwrap())), classify(&x));
        }

        #[test]
        fn classify_is_argmax_ties_negative(p in 0.0f64..=1.0) {
            let x = pv(p);
            let argmax = if x[1] > x[0] { P } else { N };
            prop_assert_eq!(classify(&x), argmax);
        }

        #[test]
        fn tune_weight_matches_oracle(v in prop::collection::vec((0u8..6, 0u8..6, any::<bool>()), 2..12)) {
            let mut labels: Vec<ClassId> = v.iter().map(|x| ClassId::from_bool(x.2)).collect();
            labels[0] = P;
            labels[1] = N;
            let a: Vec<_> = v.iter().map(|x| pv(x.0 as f64 / 5.0)).collect();
            let b: Vec<_> = v.iter().map(|x| pv(x.1 as f64 / 5.0)).collect();
            prop_assert_eq!(tune_weight(&a, &b, &labels).unwrap().w(), tune_oracle(&a, &b, &labels));
        }
    }
}
