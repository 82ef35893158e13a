//! Scalar and vector primitives shared by the rest of the crate.
//!
//! Everything here is `f64` and uses natural logarithms, so entropies are in nats.

use crate::error::{Error, Result};

/// Tolerance on `Σp = 1` accepted by [`ProbVector::new`].
pub const PROB_SUM_TOL: f64 = 1e-9;

/// A probability distribution over `C` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("probability vector must be non-empty"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid(
                "probabilities must be finite and non-negative",
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::invalid(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(ProbVector(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index and value of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> (usize, f64) {
        argmax(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Index and value of the largest entry of a non-empty slice, lowest index on ties.
pub fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn ensure_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Scales `v` to unit Euclidean norm.
pub fn unit_normalize(v: &[f64]) -> Result<Vec<f64>> {
    ensure_finite(v, "unit_normalize input")?;
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// `log Σ exp(x)` with max-subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `softmax(scores / temperature)`, stabilised by subtracting the max score.
pub fn stable_softmax(scores: &[f64], temperature: f64) -> Result<ProbVector> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if scores.is_empty() {
        return Err(Error::invalid("softmax of an empty score vector"));
    }
    ensure_finite(scores, "softmax scores")?;
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores
        .iter()
        .map(|s| ((s - m) / temperature).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    Ok(ProbVector(exps.into_iter().map(|e| e / total).collect()))
}

/// Shannon entropy in nats with `0 log 0 = 0`.
pub fn entropy(p: &ProbVector) -> f64 {
    let h: f64 = p
        .as_slice()
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| -q * q.ln())
        .sum();
    // rounding can leave a one-hot at -0.0 or a hair below zero
    h.max(0.0)
}

/// Entropy of the uniform distribution over `num_classes` classes.
pub fn max_entropy(num_classes: usize) -> f64 {
    (num_classes as f64).ln()
}
