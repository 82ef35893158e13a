//! Reference implementations written straight from the loss definitions,
//! with no shared code paths with the library.

#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Triple loop over anchors, positives and contrast entries; plain exp/log, no stabilization.
pub fn naive_loss(z: &Array2<f64>, labels: &[usize], weights: &[f64], temperature: f64, pair_weighted: bool) -> f64 {
    let n = labels.len();
    let sim = |i: usize, j: usize| -> f64 {
        let mut s = 0.0;
        for k in 0..z.ncols() {
            s += z[[i, k]] * z[[j, k]];
        }
        s / temperature
    };
    let mut total = 0.0;
    let mut norm = 0.0;
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        let mut denom = 0.0;
        for a in 0..n {
            if a != i {
                denom += sim(i, a).exp();
            }
        }
        let mut anchor_weight = 0.0;
        for &p in &positives {
            let w = if pair_weighted {
                (weights[i] * weights[p]).sqrt()
            } else {
                weights[i]
            };
            total += -w / positives.len() as f64 * (sim(i, p).exp() / denom).ln();
            anchor_weight += w / positives.len() as f64;
        }
        norm += anchor_weight;
    }
    total / norm
}

/// Unit rows drawn from an isotropic Gaussian.
pub fn unit_rows<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Array2<f64> {
    let mut z: Array2<f64> = Array2::from_shape_simple_fn((n, dim), || StandardNormal.sample(&mut *rng));
    for mut row in z.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    z
}

/// Labels with at least one repeated value, so some anchor has a positive.
pub fn labels_with_a_pair<R: Rng>(rng: &mut R, n: usize, num_labels: usize) -> Vec<usize> {
    loop {
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..num_labels)).collect();
        let mut sorted = labels.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return labels;
        }
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
