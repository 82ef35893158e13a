//! Nearest-prototype test accuracy and pseudo-label quality against hidden labels.

use std::fmt::Write as _;

use ndarray::ArrayView2;

use crate::data::Dataset;
use crate::encoder::MlpEncoder;
use crate::error::{Error, Result};
use crate::pseudo_label::{assign_pseudo_labels, EntropyGate, PrototypeBank, PseudoLabelDecision};
use crate::trainer::{prototype_probabilities, TrainConfig};

/// Bins of the weight histogram over `[0, 1]`; a weight of exactly 1 falls in the last bin.
pub const WEIGHT_BINS: usize = 10;

/// Most probable class per row; ties go to the lowest class index.
pub fn predict(encoder: &MlpEncoder, bank: &PrototypeBank, inputs: ArrayView2<'_, f64>, t_prime: f64) -> Result<Vec<usize>> {
    let z = encoder.embed(inputs)?;
    Ok(prototype_probabilities(&z, bank, t_prime)?
        .iter()
        .map(|p| bank.class_ids()[p.argmax().0])
        .collect())
}

/// Fraction of rows whose predicted class equals the label.
pub fn evaluate(
    encoder: &MlpEncoder,
    bank: &PrototypeBank,
    inputs: ArrayView2<'_, f64>,
    labels: &[usize],
    t_prime: f64,
) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty split"));
    }
    if inputs.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: inputs.nrows(),
        });
    }
    let pred = predict(encoder, bank, inputs, t_prime)?;
    let correct = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoMetrics {
    pub coverage: f64,
    /// Absent when no sample received a class label.
    pub precision: Option<f64>,
}

pub fn pseudo_metrics(decisions: &[PseudoLabelDecision], hidden: &[usize]) -> Result<PseudoMetrics> {
    if decisions.len() != hidden.len() {
        return Err(Error::DimensionMismatch {
            expected: decisions.len(),
            got: hidden.len(),
        });
    }
    if decisions.is_empty() {
        return Err(Error::invalid("no decisions to score"));
    }
    let selected: Vec<(&PseudoLabelDecision, usize)> = decisions
        .iter()
        .zip(hidden.iter().copied())
        .filter(|(d, _)| d.kind.is_labeled())
        .collect();
    let coverage = selected.len() as f64 / decisions.len() as f64;
    let precision = if selected.is_empty() {
        None
    } else {
        let correct = selected.iter().filter(|(d, y)| d.assigned_label == *y).count();
        Some(correct as f64 / selected.len() as f64)
    };
    Ok(PseudoMetrics { coverage, precision })
}

pub fn weight_histogram(decisions: &[PseudoLabelDecision]) -> Vec<usize> {
    let mut bins = vec![0; WEIGHT_BINS];
    for d in decisions {
        let b = ((d.weight * WEIGHT_BINS as f64).floor() as usize).min(WEIGHT_BINS - 1);
        bins[b] += 1;
    }
    bins
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub test_accuracy: f64,
    pub pseudo_coverage: f64,
    pub pseudo_precision: Option<f64>,
    pub weight_histogram: Vec<usize>,
}

/// Test accuracy plus pseudo-labeling of the whole unlabeled pool on un-augmented inputs.
pub fn report(
    encoder: &MlpEncoder,
    bank: &PrototypeBank,
    dataset: &Dataset,
    config: &TrainConfig,
    gate_enabled: bool,
) -> Result<EvalReport> {
    let (tx, ty) = dataset.test_split();
    let test_accuracy = evaluate(encoder, bank, tx.view(), &ty, config.t_prime)?;
    let pool = dataset.unlabeled_pool();
    let z = encoder.embed(pool.features.view())?;
    let probs = prototype_probabilities(&z, bank, config.t_prime)?;
    let gate = EntropyGate::new(config.tau, config.tau_ent, bank.num_classes(), config.w_min)?;
    let decisions = assign_pseudo_labels(&probs, &gate, config.lambda_reject, gate_enabled)?;
    let m = pseudo_metrics(&decisions, &dataset.unlabeled_truth())?;
    Ok(EvalReport {
        test_accuracy,
        pseudo_coverage: m.coverage,
        pseudo_precision: m.precision,
        weight_histogram: weight_histogram(&decisions),
    })
}

impl EvalReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("test_accuracy,pseudo_coverage,pseudo_precision");
        for b in 0..WEIGHT_BINS {
            let _ = write!(out, ",weight_bin_{b}");
        }
        let precision = self.pseudo_precision.map(|p| format!("{p:?}")).unwrap_or_default();
        let _ = write!(out, "\n{:?},{:?},{}", self.test_accuracy, self.pseudo_coverage, precision);
        for c in &self.weight_histogram {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!("test accuracy     {:.4}\n", self.test_accuracy);
        let _ = writeln!(out, "pseudo coverage   {:.4}", self.pseudo_coverage);
        match self.pseudo_precision {
            Some(p) => {
                let _ = writeln!(out, "pseudo precision  {p:.4}");
            }
            None => out.push_str("pseudo precision  n/a\n"),
        }
        out.push_str("weight histogram\n");
        for (b, c) in self.weight_histogram.iter().enumerate() {
            let lo = b as f64 / WEIGHT_BINS as f64;
            let hi = (b + 1) as f64 / WEIGHT_BINS as f64;
            let _ = writeln!(out, "  [{lo:.1}, {hi:.1}{}  {c}", if b + 1 == WEIGHT_BINS { "]" } else { ")" });
        }
        out
    }
}
