use std::fmt;

use crate::{Error, Result};

/// Binary class label. `Negative` is index 0, `Positive` index 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassId {
    Negative,
    Positive,
}

impl ClassId {
    pub fn index(self) -> usize {
        match self {
            ClassId::Negative => 0,
            ClassId::Positive => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(ClassId::Negative),
            1 => Some(ClassId::Positive),
            _ => None,
        }
    }

    pub fn from_bool(positive: bool) -> Self {
        if positive {
            ClassId::Positive
        } else {
            ClassId::Negative
        }
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Tolerance on `p[0] + p[1] = 1`.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Two-class probability vector: `p[0]` negative, `p[1]` positive.
///
/// Used for the CNN branch output, the forest branch output, and the fused result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbVector([f64; 2]);

impl ProbVector {
    pub fn new(negative: f64, positive: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        if !ok(negative) || !ok(positive) || ((negative + positive) - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidInput(format!(
                "({negative}, {positive}) is not a probability vector"
            )));
        }
        Ok(ProbVector([negative, positive]))
    }

    /// Builds from a positive-class probability; `p[0] = 1 - p1`.
    pub fn from_positive(p1: f64) -> Result<Self> {
        Self::new(1.0 - p1, p1)
    }

    /// Normalizes two non-negative counts.
    pub fn from_counts(counts: [u32; 2]) -> Result<Self> {
        let n = counts[0] as f64 + counts[1] as f64;
        if n == 0.0 {
            return Err(Error::InvalidInput("cannot normalize zero counts".into()));
        }
        Ok(ProbVector([counts[0] as f64 / n, counts[1] as f64 / n]))
    }

    /// Arithmetic mean of a non-empty set of probability vectors.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a ProbVector>) -> Result<Self> {
        let mut acc = [0.0f64; 2];
        let mut n = 0usize;
        for p in items {
            acc[0] += p.0[0];
            acc[1] += p.0[1];
            n += 1;
        }
        if n == 0 {
            return Err(Error::InvalidInput("mean of zero probability vectors".into()));
        }
        Ok(ProbVector([acc[0] / n as f64, acc[1] / n as f64]))
    }

    pub(crate) fn from_raw_unchecked(p: [f64; 2]) -> Self {
        ProbVector(p)
    }

    pub fn negative(&self) -> f64 {
        self.0[0]
    }

    pub fn positive(&self) -> f64 {
        self.0[1]
    }

    pub fn as_array(&self) -> [f64; 2] {
        self.0
    }

    pub fn get(&self, class: ClassId) -> f64 {
        self.0[class.index()]
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}
