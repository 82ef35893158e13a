//! Weighted semi-supervised contrastive losses and their analytic gradients.
//!
//! Both variants share the same per-anchor structure. For anchor `i` with positive
//! set `P(i)`, each positive `p` carries a coefficient `a_ip`, and the anchor
//! contributes `Σ_p a_ip (LSE_i - s_ip)` where `s_ij = z_i·z_j / T` and `LSE_i` is
//! the log-sum-exp of `s_ij` over every `j != i`. The variants differ only in the
//! coefficients and the normalizer:
//!
//! | variant | `a_ip`                     | normalizer term of anchor `i` |
//! |---------|----------------------------|-------------------------------|
//! | SSC     | `λ_i / |P(i)|`             | `λ_i`                         |
//! | SSC-E   | `sqrt(λ_i λ_p) / |P(i)|`   | `Σ_p a_ip` (the mean pair weight) |
//!
//! Anchors with an empty positive set contribute to neither sum, but their
//! embeddings still appear as contrast terms in every other anchor's denominator.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Tolerance on embedding norms accepted by [`ContrastiveBatch::new`].
pub const EMBEDDING_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossVariant {
    /// Anchor-weighted baseline.
    Ssc,
    /// Pair-weighted with the geometric mean of anchor and positive weights.
    SscE,
}

impl LossVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossVariant::Ssc => "ssc",
            LossVariant::SscE => "ssc-e",
        }
    }
}

impl std::str::FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssc" => Ok(LossVariant::Ssc),
            "ssc-e" | "ssce" => Ok(LossVariant::SscE),
            other => Err(Error::invalid(format!("unknown loss variant `{other}`"))),
        }
    }
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Embeddings, labels and weights for one loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    embeddings: Array2<f64>,
    labels: Vec<usize>,
    weights: Vec<f64>,
    temperature: f64,
    /// Entries set to `false` never act as anchors (they may still be positives).
    anchor_mask: Option<Vec<bool>>,
}

impl ContrastiveBatch {
    pub fn new(
        embeddings: Array2<f64>,
        labels: Vec<usize>,
        weights: Vec<f64>,
        temperature: f64,
    ) -> Result<Self> {
        let n = embeddings.nrows();
        if n < 2 {
            return Err(Error::invalid("a contrastive batch needs at least two entries"));
        }
        for len in [labels.len(), weights.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, got: len });
            }
        }
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::invalid("weights must lie in [0, 1]"));
        }
        for (i, row) in embeddings.rows().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if !norm.is_finite() {
                return Err(Error::NonFinite(format!("embedding {i}")));
            }
            if (norm - 1.0).abs() > EMBEDDING_NORM_TOL {
                return Err(Error::invalid(format!(
                    "embedding {i} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(ContrastiveBatch {
            embeddings,
            labels,
            weights,
            temperature,
            anchor_mask: None,
        })
    }

    pub fn with_anchor_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: mask.len(),
            });
        }
        self.anchor_mask = Some(mask);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn embeddings(&self) -> &Array2<f64> {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn anchor_mask(&self) -> Option<&[bool]> {
        self.anchor_mask.as_deref()
    }

    pub fn is_anchor(&self, i: usize) -> bool {
        self.anchor_mask.as_ref().is_none_or(|m| m[i])
    }
}

/// Same-label neighbours of every entry, excluding the entry itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositiveIndex {
    sets: Vec<Vec<usize>>,
}

impl PositiveIndex {
    pub fn positives(&self, i: usize) -> &[usize] {
        &self.sets[i]
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Entries whose positive set is empty.
    pub fn without_positives(&self) -> Vec<usize> {
        (0..self.sets.len())
            .filter(|&i| self.sets[i].is_empty())
            .collect()
    }
}

pub fn build_positive_index(labels: &[usize]) -> PositiveIndex {
    let mut by_label: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &y) in labels.iter().enumerate() {
        by_label.entry(y).or_default().push(i);
    }
    let sets = labels
        .iter()
        .enumerate()
        .map(|(i, y)| by_label[y].iter().copied().filter(|&j| j != i).collect())
        .collect();
    PositiveIndex { sets }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    /// `∂L/∂z`, one row per batch entry.
    pub grad: Array2<f64>,
    /// Anchors that contributed a term.
    pub anchor_count: usize,
}

/// Per-anchor coefficients shared by the value and the gradient.
struct AnchorTerms {
    /// `(anchor, [(positive, a_ip)])`
    anchors: Vec<(usize, Vec<(usize, f64)>)>,
    normalizer: f64,
}

fn anchor_terms(
    labels: &[usize],
    weights: &[f64],
    mask: Option<&[bool]>,
    variant: LossVariant,
) -> Result<AnchorTerms> {
    let index = build_positive_index(labels);
    let mut anchors = Vec::new();
    let mut normalizer = 0.0;
    for i in 0..labels.len() {
        let positives = index.positives(i);
        if positives.is_empty() || mask.is_some_and(|m| !m[i]) {
            continue;
        }
        // divisions rather than reciprocal products keep uniform weights exact,
        // so both variants produce identical bits when every λ is 1
        let count = positives.len() as f64;
        let pair_weights: Vec<f64> = positives
            .iter()
            .map(|&p| match variant {
                LossVariant::Ssc => weights[i],
                LossVariant::SscE => (weights[i] * weights[p]).sqrt(),
            })
            .collect();
        let coeffs: Vec<(usize, f64)> = positives
            .iter()
            .zip(&pair_weights)
            .map(|(&p, &w)| (p, w / count))
            .collect();
        normalizer += match variant {
            LossVariant::Ssc => weights[i],
            LossVariant::SscE => pair_weights.iter().sum::<f64>() / count,
        };
        anchors.push((i, coeffs));
    }
    if !(normalizer > 0.0) {
        return Err(Error::ZeroNormalizer);
    }
    Ok(AnchorTerms {
        anchors,
        normalizer,
    })
}

/// Evaluates the loss and its gradient for arbitrary (not necessarily unit) embeddings.
fn evaluate(
    embeddings: ArrayView2<'_, f64>,
    labels: &[usize],
    weights: &[f64],
    temperature: f64,
    mask: Option<&[bool]>,
    variant: LossVariant,
    with_grad: bool,
) -> Result<LossResult> {
    let n = embeddings.nrows();
    let terms = anchor_terms(labels, weights, mask, variant)?;
    let sim = embeddings.dot(&embeddings.t()) / temperature;

    // coefficient matrix G with ∂L/∂s_ij = G_ij
    let mut g = Array2::<f64>::zeros((n, n));
    let mut total = 0.0;
    let mut others = Vec::with_capacity(n.saturating_sub(1));
    for (i, coeffs) in &terms.anchors {
        let i = *i;
        let row = sim.row(i);
        others.clear();
        others.extend((0..n).filter(|&j| j != i).map(|j| row[j]));
        let lse = math::log_sum_exp(&others);
        let mut anchor_sum = 0.0;
        let mut a_total = 0.0;
        for &(p, a) in coeffs {
            anchor_sum += a * (lse - row[p]);
            a_total += a;
        }
        total += anchor_sum;
        if with_grad {
            let mut g_row = g.row_mut(i);
            for j in (0..n).filter(|&j| j != i) {
                g_row[j] = a_total * (row[j] - lse).exp();
            }
            for &(p, a) in coeffs {
                g_row[p] -= a;
            }
        }
    }
    let value = total / terms.normalizer;
    if !value.is_finite() {
        return Err(Error::NonFinite("contrastive loss value".into()));
    }

    let grad = if with_grad {
        g /= terms.normalizer * temperature;
        // s_ij depends on z_i and z_j symmetrically
        let grad = g.dot(&embeddings) + g.t().dot(&embeddings);
        math::ensure_finite(grad.as_slice().expect("standard layout"), "loss gradient")?;
        grad
    } else {
        Array2::zeros((n, embeddings.ncols()))
    };
    Ok(LossResult {
        value,
        grad,
        anchor_count: terms.anchors.len(),
    })
}

pub fn contrastive_loss(batch: &ContrastiveBatch, variant: LossVariant) -> Result<LossResult> {
    evaluate(
        batch.embeddings.view(),
        &batch.labels,
        &batch.weights,
        batch.temperature,
        batch.anchor_mask(),
        variant,
        true,
    )
}

/// Baseline loss: each anchor term is scaled by the anchor's weight.
pub fn ssc_loss(batch: &ContrastiveBatch) -> Result<LossResult> {
    contrastive_loss(batch, LossVariant::Ssc)
}

/// Pair-weighted loss: each (anchor, positive) term is scaled by `sqrt(λ_i λ_p)`.
pub fn ssc_e_loss(batch: &ContrastiveBatch) -> Result<LossResult> {
    contrastive_loss(batch, LossVariant::SscE)
}

/// Loss value at perturbed embeddings, used by the finite-difference checks.
pub(crate) fn loss_value_at(
    batch: &ContrastiveBatch,
    embeddings: ArrayView2<'_, f64>,
    variant: LossVariant,
) -> Result<f64> {
    Ok(evaluate(
        embeddings,
        &batch.labels,
        &batch.weights,
        batch.temperature,
        batch.anchor_mask(),
        variant,
        false,
    )?
    .value)
}

/// Relative error used by every gradient check: `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central-difference check of the analytic embedding gradient.
///
/// The intended range for `epsilon` is `[1e-7, 1e-3]`; coarser steps are accepted
/// and simply report the larger truncation error. Returns the largest per-coordinate relative error.
pub fn grad_check(batch: &ContrastiveBatch, variant: LossVariant, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let analytic = contrastive_loss(batch, variant)?.grad;
    let mut z = batch.embeddings.clone();
    let mut worst: f64 = 0.0;
    for r in 0..z.nrows() {
        for c in 0..z.ncols() {
            let orig = z[[r, c]];
            z[[r, c]] = orig + epsilon;
            let plus = loss_value_at(batch, z.view(), variant)?;
            z[[r, c]] = orig - epsilon;
            let minus = loss_value_at(batch, z.view(), variant)?;
            z[[r, c]] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            worst = worst.max(relative_error(analytic[[r, c]], numeric));
        }
    }
    Ok(worst)
}

/// Rows of `grad` belonging to entries that never enter the loss are exactly zero.
pub fn zero_rows(grad: &Array2<f64>) -> Vec<usize> {
    grad.axis_iter(Axis(0))
        .enumerate()
        .filter(|(_, row)| row.iter().all(|&x| x == 0.0))
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(angles: &[f64]) -> Array2<f64> {
        let mut z = Array2::zeros((angles.len(), 2));
        for (i, a) in angles.iter().enumerate() {
            z[[i, 0]] = a.cos();
            z[[i, 1]] = a.sin();
        }
        z
    }

    #[test]
    fn positive_index_examples() {
        let p = build_positive_index(&[0, 0, 1]);
        assert_eq!(p.positives(0), &[1]);
        assert_eq!(p.positives(1), &[0]);
        assert!(p.positives(2).is_empty());
        assert_eq!(p.without_positives(), vec![2]);

        let p = build_positive_index(&[4, 5, 6]);
        assert_eq!(p.without_positives(), vec![0, 1, 2]);

        let p = build_positive_index(&[2, 2, 2]);
        assert_eq!(p.positives(0), &[1, 2]);
        assert_eq!(p.positives(1), &[0, 2]);
        assert_eq!(p.positives(2), &[0, 1]);
    }

    #[test]
    fn batch_validation() {
        let z = circle(&[0.0, 1.0]);
        assert!(ContrastiveBatch::new(z.clone(), vec![0], vec![1.0, 1.0], 0.5).is_err());
        assert!(ContrastiveBatch::new(z.clone(), vec![0, 0], vec![1.0, 1.0], 0.0).is_err());
        assert!(ContrastiveBatch::new(z.clone(), vec![0, 0], vec![1.0, 1.5], 0.5).is_err());
        assert!(ContrastiveBatch::new(z * 2.0, vec![0, 0], vec![1.0, 1.0], 0.5).is_err());
        assert!(ContrastiveBatch::new(circle(&[0.0]), vec![0], vec![1.0], 0.5).is_err());
    }

    #[test]
    fn two_entries_same_label_is_zero() {
        let b = ContrastiveBatch::new(circle(&[0.3, 2.0]), vec![1, 1], vec![1.0, 1.0], 0.5).unwrap();
        for v in [LossVariant::Ssc, LossVariant::SscE] {
            let r = contrastive_loss(&b, v).unwrap();
            assert_eq!(r.value, 0.0);
            assert_eq!(r.anchor_count, 2);
        }
    }

    #[test]
    fn zero_normalizer_is_an_error() {
        let b = ContrastiveBatch::new(circle(&[0.0, 1.0, 2.0]), vec![0, 1, 2], vec![1.0; 3], 0.5)
            .unwrap();
        assert!(matches!(ssc_loss(&b), Err(Error::ZeroNormalizer)));
        let b = ContrastiveBatch::new(circle(&[0.0, 1.0]), vec![0, 0], vec![0.0, 0.0], 0.5).unwrap();
        assert!(matches!(ssc_e_loss(&b), Err(Error::ZeroNormalizer)));
    }

    #[test]
    fn zero_weight_pair_contributes_nothing() {
        // anchor 0 has positives {1, 2}; λ_2 = 0 removes the (0, 2) term but keeps |P(0)| = 2
        let z = circle(&[0.0, 0.4, 2.5, 1.0]);
        let b = ContrastiveBatch::new(z.clone(), vec![0, 0, 0, 1], vec![1.0, 1.0, 0.0, 1.0], 0.5)
            .unwrap();
        let r = ssc_e_loss(&b).unwrap();
        let s = z.dot(&z.t()) / 0.5;
        let lse = |i: usize| {
            let xs: Vec<f64> = (0..4).filter(|&j| j != i).map(|j| s[[i, j]]).collect();
            math::log_sum_exp(&xs)
        };
        let expected = (0.5 * (lse(0) - s[[0, 1]]) + 0.5 * (lse(1) - s[[1, 0]])) / (0.5 + 0.5);
        assert!((r.value - expected).abs() < 1e-13, "{} vs {expected}", r.value);
    }

    #[test]
    fn unused_coordinate_has_zero_gradient() {
        let mut z = Array2::zeros((4, 3));
        z.slice_mut(ndarray::s![.., 0..2]).assign(&circle(&[0.1, 0.9, 2.0, 3.0]));
        let b = ContrastiveBatch::new(z, vec![0, 0, 1, 5], vec![1.0, 0.5, 1.0, 0.2], 0.5).unwrap();
        let r = ssc_e_loss(&b).unwrap();
        for row in 0..4 {
            assert_eq!(r.grad[[row, 2]], 0.0);
        }
        assert!(grad_check(&b, LossVariant::SscE, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn anchor_mask_drops_anchor_terms() {
        let z = circle(&[0.0, 0.3, 2.0, 2.2]);
        let full = ContrastiveBatch::new(z, vec![0, 0, 1, 1], vec![1.0; 4], 0.5).unwrap();
        let masked = full.clone().with_anchor_mask(vec![true, false, true, true]).unwrap();
        let a = ssc_loss(&full).unwrap();
        let b = ssc_loss(&masked).unwrap();
        assert_eq!(a.anchor_count, 4);
        assert_eq!(b.anchor_count, 3);
        assert!(grad_check(&masked, LossVariant::Ssc, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn large_temperature_limit() {
        let z = circle(&[0.0, 0.7, 1.9, 3.1, 4.4]);
        let b = ContrastiveBatch::new(z, vec![3; 5], vec![1.0, 0.4, 0.9, 0.3, 0.6], 1e3).unwrap();
        for v in [LossVariant::Ssc, LossVariant::SscE] {
            let r = contrastive_loss(&b, v).unwrap();
            assert!((r.value - 4f64.ln()).abs() < 1e-3);
        }
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("ssc".parse::<LossVariant>().unwrap(), LossVariant::Ssc);
        assert_eq!("ssc-e".parse::<LossVariant>().unwrap(), LossVariant::SscE);
        assert!("triplet".parse::<LossVariant>().is_err());
    }
}
