//! Pseudo-labeling of unlabeled samples from prototype similarities.
//!
//! Pass 1 applies the max-probability threshold `tau`. Pass 2, when the entropy
//! gate is enabled, admits the remaining samples whose predictive entropy is below
//! `h_base = tau_ent * log C` and weights them by how close their entropy is to
//! `e_min`, the largest entropy seen among the confident samples of the batch.
//! Everything else gets a unique label and the fixed rejection weight.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, ProbVector};

/// Tolerance on the unit norm of each prototype.
const PROTOTYPE_NORM_TOL: f64 = 1e-6;

/// One unit vector per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    prototypes: Array2<f64>,
    class_ids: Vec<usize>,
}

impl PrototypeBank {
    /// Builds a bank whose row `k` is the prototype for class `k`.
    pub fn new(prototypes: Array2<f64>) -> Result<Self> {
        let k = prototypes.nrows();
        Self::with_class_ids(prototypes, (0..k).collect())
    }

    pub fn with_class_ids(prototypes: Array2<f64>, class_ids: Vec<usize>) -> Result<Self> {
        let k = prototypes.nrows();
        if k == 0 || prototypes.ncols() == 0 {
            return Err(Error::invalid("prototype bank must be non-empty"));
        }
        if class_ids.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: class_ids.len(),
            });
        }
        let mut seen = vec![false; k];
        for &c in &class_ids {
            if c >= k || seen[c] {
                return Err(Error::invalid("class ids must be a permutation of 0..K"));
            }
            seen[c] = true;
        }
        for row in prototypes.rows() {
            let row = row.to_vec();
            math::ensure_finite(&row, "prototype")?;
            let n = math::norm(&row);
            if (n - 1.0).abs() > PROTOTYPE_NORM_TOL {
                return Err(Error::invalid(format!("prototype norm {n} is not 1")));
            }
        }
        Ok(PrototypeBank {
            prototypes,
            class_ids,
        })
    }

    /// Normalizes each row before building the bank.
    pub fn from_raw(raw: Array2<f64>) -> Result<Self> {
        let mut out = raw.clone();
        for (mut dst, src) in out.rows_mut().into_iter().zip(raw.rows()) {
            let unit = math::unit_normalize(&src.to_vec())?;
            dst.assign(&ArrayView1::from(&unit));
        }
        Self::new(out)
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.nrows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.ncols()
    }

    pub fn prototypes(&self) -> &Array2<f64> {
        &self.prototypes
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub(crate) fn prototypes_mut(&mut self) -> &mut Array2<f64> {
        &mut self.prototypes
    }
}

/// Softmax over the cosine similarities between `z_w` and every prototype, at temperature `t_prime`.
///
/// The returned vector is indexed by class id.
pub fn class_probabilities(z_w: &[f64], bank: &PrototypeBank, t_prime: f64) -> Result<ProbVector> {
    if z_w.len() != bank.dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.dim(),
            got: z_w.len(),
        });
    }
    let mut scores = vec![0.0; bank.num_classes()];
    let z = ArrayView1::from(z_w);
    for (row, &class) in bank.prototypes.rows().into_iter().zip(&bank.class_ids) {
        scores[class] = row.dot(&z);
    }
    math::stable_softmax(&scores, t_prime)
}

/// Gate parameters for one pass of [`assign_pseudo_labels`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyGate {
    tau: f64,
    tau_ent: f64,
    num_classes: usize,
    h_max: f64,
    h_base: f64,
    w_min: f64,
}

impl EntropyGate {
    pub fn new(tau: f64, tau_ent: f64, num_classes: usize, w_min: f64) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::invalid(format!("tau must lie in (0, 1], got {tau}")));
        }
        if !(tau_ent > 0.0 && tau_ent <= 1.0) {
            return Err(Error::invalid(format!(
                "tau_ent must lie in (0, 1], got {tau_ent}"
            )));
        }
        if num_classes < 2 {
            return Err(Error::invalid("entropy gate needs at least two classes"));
        }
        if !(0.0..=1.0).contains(&w_min) {
            return Err(Error::invalid(format!("w_min must lie in [0, 1], got {w_min}")));
        }
        let h_max = math::max_entropy(num_classes);
        Ok(EntropyGate {
            tau,
            tau_ent,
            num_classes,
            h_max,
            h_base: tau_ent * h_max,
            w_min,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn tau_ent(&self) -> f64 {
        self.tau_ent
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn h_base(&self) -> f64 {
        self.h_base
    }

    pub fn w_min(&self) -> f64 {
        self.w_min
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecisionKind {
    Confident,
    EntropySelected,
    Rejected,
}

impl DecisionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DecisionKind::Confident => "confident",
            DecisionKind::EntropySelected => "entropy_selected",
            DecisionKind::Rejected => "rejected",
        }
    }

    /// True for the kinds that carry a real class label.
    pub fn is_labeled(&self) -> bool {
        !matches!(self, DecisionKind::Rejected)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelDecision {
    pub sample_index: usize,
    pub kind: DecisionKind,
    /// Class id, or `K + sample_index` when rejected.
    pub assigned_label: usize,
    pub weight: f64,
    pub entropy: f64,
    pub max_prob: f64,
}

/// Largest entropy among samples whose max probability exceeds `tau`.
pub fn compute_e_min(samples: &[(f64, f64)], tau: f64) -> Option<f64> {
    samples
        .iter()
        .filter(|(max_prob, _)| *max_prob > tau)
        .map(|&(_, h)| h)
        .fold(None, |acc: Option<f64>, h| Some(acc.map_or(h, |a| a.max(h))))
}

/// Linear confidence weight: 1 at `h_i = e_min`, `w_min` at `h_i = h_base`.
pub fn adaptive_weight(h_i: f64, e_min: f64, h_base: f64, w_min: f64) -> Result<f64> {
    if e_min >= h_base {
        return Err(Error::DegenerateGate { e_min, h_base });
    }
    // endpoints are returned exactly rather than through the interpolation
    if h_i <= e_min {
        return Ok(1.0);
    }
    if h_i >= h_base {
        return Ok(w_min);
    }
    let s = (h_base - h_i) / (h_base - e_min);
    Ok(w_min + (1.0 - w_min) * s)
}

/// Decides label and weight for every unlabeled sample, in input order.
pub fn assign_pseudo_labels(
    probs: &[ProbVector],
    gate: &EntropyGate,
    lambda_reject: f64,
    entropy_gate_enabled: bool,
) -> Result<Vec<PseudoLabelDecision>> {
    let k = gate.num_classes();
    let stats: Vec<(usize, f64, f64)> = probs
        .iter()
        .map(|p| {
            if p.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: p.len(),
                });
            }
            let (class, max_prob) = p.argmax();
            Ok((class, max_prob, math::entropy(p)))
        })
        .collect::<Result<_>>()?;

    let pass1: Vec<(f64, f64)> = stats.iter().map(|&(_, m, h)| (m, h)).collect();
    let e_min = if entropy_gate_enabled {
        compute_e_min(&pass1, gate.tau())
    } else {
        None
    };

    let decisions = stats
        .iter()
        .enumerate()
        .map(|(i, &(class, max_prob, h))| {
            let (kind, assigned_label, weight) = if max_prob > gate.tau() {
                (DecisionKind::Confident, class, 1.0)
            } else {
                match e_min {
                    Some(e_min) if h < gate.h_base() => {
                        // e_min >= h_base never reaches the interpolation: h < h_base <= e_min
                        let w = if h <= e_min {
                            1.0
                        } else {
                            adaptive_weight(h, e_min, gate.h_base(), gate.w_min())?
                        };
                        (DecisionKind::EntropySelected, class, w)
                    }
                    _ => (DecisionKind::Rejected, k + i, lambda_reject),
                }
            };
            Ok(PseudoLabelDecision {
                sample_index: i,
                kind,
                assigned_label,
                weight,
                entropy: h,
                max_prob,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(decisions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn gate4() -> EntropyGate {
        EntropyGate::new(0.95, 0.4, 4, 0.2).unwrap()
    }

    #[test]
    fn bank_validation() {
        assert!(PrototypeBank::new(array![[1.0, 0.0], [0.0, 2.0]]).is_err());
        assert!(PrototypeBank::with_class_ids(array![[1.0, 0.0], [0.0, 1.0]], vec![0, 0]).is_err());
        let b = PrototypeBank::from_raw(array![[3.0, 4.0], [0.0, 2.0]]).unwrap();
        assert!((b.prototypes()[[0, 0]] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn probabilities_orthogonal_pair() {
        let bank = PrototypeBank::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let p = class_probabilities(&[1.0, 0.0], &bank, 1.0).unwrap();
        assert!((p.as_slice()[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((p.as_slice()[1] - 0.268_941_421_369_995_1).abs() < 1e-12);
    }

    #[test]
    fn probabilities_identical_prototypes_are_uniform() {
        let bank = PrototypeBank::new(array![[0.6, 0.8], [0.6, 0.8], [0.6, 0.8]]).unwrap();
        let p = class_probabilities(&[1.0, 0.0], &bank, 0.1).unwrap();
        for q in p.as_slice() {
            assert!((q - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn probabilities_three_class_mixture() {
        // cosines (2/√5, 1/√5, 0) at T' = 0.1, softmax evaluated with mpmath at 50 digits
        let bank =
            PrototypeBank::new(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let z = math::unit_normalize(&[1.0, 0.5, 0.0]).unwrap();
        let p = class_probabilities(&z, &bank, 0.1).unwrap();
        let expected = [
            0.988_578_582_469_735_7,
            0.011_292_425_386_027_86,
            0.000_128_992_144_236_455_1,
        ];
        for (a, b) in p.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn probabilities_respect_class_id_permutation() {
        let bank =
            PrototypeBank::with_class_ids(array![[1.0, 0.0], [0.0, 1.0]], vec![1, 0]).unwrap();
        let p = class_probabilities(&[1.0, 0.0], &bank, 1.0).unwrap();
        assert!(p.as_slice()[1] > p.as_slice()[0]);
    }

    #[test]
    fn probabilities_dimension_mismatch() {
        let bank = PrototypeBank::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(
            class_probabilities(&[1.0, 0.0, 0.0], &bank, 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn e_min_examples() {
        let xs = [(0.99, 0.1), (0.97, 0.3), (0.96, 0.2), (0.5, 0.9)];
        assert_eq!(compute_e_min(&xs, 0.95), Some(0.3));
        assert_eq!(compute_e_min(&[(0.5, 0.9)], 0.95), None);
        assert_eq!(compute_e_min(&[], 0.95), None);
    }

    #[test]
    fn adaptive_weight_examples() {
        assert_eq!(adaptive_weight(0.3, 0.3, 0.9, 0.2).unwrap(), 1.0);
        assert_eq!(adaptive_weight(0.9, 0.3, 0.9, 0.2).unwrap(), 0.2);
        assert!((adaptive_weight(0.6, 0.3, 0.9, 0.2).unwrap() - 0.6).abs() < 1e-15);
        assert!(matches!(
            adaptive_weight(0.5, 0.9, 0.9, 0.2),
            Err(Error::DegenerateGate { .. })
        ));
    }

    #[test]
    fn confident_and_rejected_examples() {
        let g = EntropyGate::new(0.95, 0.4, 2, 0.2).unwrap();
        let d = assign_pseudo_labels(&[pv(&[0.99, 0.01])], &g, 0.2, true).unwrap();
        assert_eq!(d[0].kind, DecisionKind::Confident);
        assert_eq!((d[0].assigned_label, d[0].weight), (0, 1.0));

        let d = assign_pseudo_labels(&[pv(&[0.99, 0.01]), pv(&[0.9, 0.1])], &g, 0.2, false).unwrap();
        assert_eq!(d[1].kind, DecisionKind::Rejected);
        assert_eq!((d[1].assigned_label, d[1].weight), (3, 0.2));
    }

    #[test]
    fn no_confident_sample_skips_gate() {
        let g = gate4();
        let rows = [pv(&[0.9, 0.05, 0.03, 0.02]), pv(&[0.25; 4])];
        let d = assign_pseudo_labels(&rows, &g, 0.2, true).unwrap();
        assert!(d.iter().all(|d| d.kind == DecisionKind::Rejected));
        assert_eq!(d[0].assigned_label, 4);
        assert_eq!(d[1].assigned_label, 5);
    }

    #[test]
    fn degenerate_gate_keeps_only_full_weight_branch() {
        // K = 10, h_base ≈ 0.2501 sits below the confident sample's entropy (≈ 0.3032)
        let g = EntropyGate::new(0.95, 0.1086, 10, 0.2).unwrap();
        let mut conf = vec![0.049 / 9.0; 10];
        conf[0] = 0.951;
        let mut near = vec![0.0; 10];
        near[3] = 0.95;
        near[4] = 0.05;
        let rows = [pv(&conf), pv(&near), pv(&[0.1; 10])];
        assert!(math::entropy(&rows[0]) >= g.h_base());
        assert!(math::entropy(&rows[1]) < g.h_base());
        let d = assign_pseudo_labels(&rows, &g, 0.2, true).unwrap();
        assert_eq!(d[0].kind, DecisionKind::Confident);
        assert_eq!(d[1].kind, DecisionKind::EntropySelected);
        assert_eq!((d[1].assigned_label, d[1].weight), (3, 1.0));
        assert_eq!(d[2].kind, DecisionKind::Rejected);
        assert_eq!(d[2].assigned_label, 12);
    }

    #[test]
    fn argmax_ties_are_deterministic() {
        let g = EntropyGate::new(0.4, 1.0, 3, 0.2).unwrap();
        let d = assign_pseudo_labels(&[pv(&[0.45, 0.45, 0.1])], &g, 0.2, true).unwrap();
        assert_eq!(d[0].assigned_label, 0);
    }

    #[test]
    fn sharper_temperature_raises_max_prob() {
        let bank =
            PrototypeBank::new(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let z = math::unit_normalize(&[0.7, 0.5, 0.2]).unwrap();
        let sharp = class_probabilities(&z, &bank, 0.05).unwrap().argmax().1;
        let soft = class_probabilities(&z, &bank, 0.5).unwrap().argmax().1;
        assert!(sharp >= soft);
    }

    fn prob_rows(k: usize) -> impl Strategy<Value = Vec<ProbVector>> {
        prop::collection::vec(
            (prop::collection::vec(-3.0f64..3.0, k), 0.02f64..1.0),
            1..24,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .map(|(s, t)| math::stable_softmax(&s, t).unwrap())
                .collect()
        })
    }

    proptest! {
        #[test]
        fn gate_on_labels_superset_of_gate_off(
            rows in prob_rows(4),
            tau in 0.5f64..0.99,
            tau_ent in 0.05f64..1.0,
        ) {
            let g = EntropyGate::new(tau, tau_ent, 4, 0.2).unwrap();
            let on = assign_pseudo_labels(&rows, &g, 0.2, true).unwrap();
            let off = assign_pseudo_labels(&rows, &g, 0.2, false).unwrap();
            for (a, b) in on.iter().zip(&off) {
                if b.kind.is_labeled() {
                    prop_assert!(a.kind.is_labeled());
                    prop_assert_eq!(a.assigned_label, b.assigned_label);
                }
            }
        }

        #[test]
        fn weights_in_range_and_monotone(
            rows in prob_rows(4),
            tau in 0.5f64..0.99,
            tau_ent in 0.05f64..1.0,
            w_min in 0.0f64..1.0,
        ) {
            let g = EntropyGate::new(tau, tau_ent, 4, w_min).unwrap();
            let d = assign_pseudo_labels(&rows, &g, 0.2, true).unwrap();
            for x in &d {
                match x.kind {
                    DecisionKind::Confident => {
                        prop_assert_eq!(x.weight, 1.0);
                        prop_assert!(x.max_prob > tau);
                    }
                    DecisionKind::EntropySelected => {
                        prop_assert!(x.weight >= w_min && x.weight <= 1.0);
                        prop_assert!(x.entropy < g.h_base());
                    }
                    DecisionKind::Rejected => {
                        prop_assert_eq!(x.weight, 0.2);
                        prop_assert!(x.assigned_label >= 4);
                    }
                }
            }
            let sel: Vec<_> = d.iter().filter(|x| x.kind == DecisionKind::EntropySelected).collect();
            for a in &sel {
                for b in &sel {
                    if a.entropy < b.entropy {
                        prop_assert!(a.weight >= b.weight);
                    }
                }
            }
        }

        #[test]
        fn decisions_are_deterministic(rows in prob_rows(3)) {
            let g = EntropyGate::new(0.9, 0.5, 3, 0.2).unwrap();
            let a = assign_pseudo_labels(&rows, &g, 0.2, true).unwrap();
            let b = assign_pseudo_labels(&rows, &g, 0.2, true).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
