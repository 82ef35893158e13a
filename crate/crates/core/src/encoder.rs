//! Multilayer perceptron encoder with unit-normalized outputs, and momentum SGD.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::pseudo_label::PrototypeBank;

/// Name of the hidden-layer nonlinearity, recorded in configs and checkpoints.
pub const ACTIVATION: &str = "tanh";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dense {
    /// `fan_in × fan_out`
    weight: Array2<f64>,
    bias: Array1<f64>,
}

/// `d_in → hidden… → d_emb`, tanh between layers, linear last layer, then L2 normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpEncoder {
    layers: Vec<Dense>,
    /// Bumped on every parameter mutation so stale caches are detected.
    version: u64,
}

/// Intermediates kept by [`MlpEncoder::forward`] for [`MlpEncoder::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// Input to each layer: the raw batch, then the tanh outputs.
    layer_inputs: Vec<Array2<f64>>,
    embeddings: Array2<f64>,
    pre_norms: Vec<f64>,
}

/// Parameter gradients in the same layout as the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl EncoderGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice().expect("standard layout"), b.as_slice().expect("standard layout")])
            .collect()
    }
}

impl MlpEncoder {
    /// Uniform weights in `±1/sqrt(fan_in)`, zero biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(format!(
                "encoder needs at least two non-zero widths, got {widths:?}"
            )));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                Dense {
                    weight: Array2::from_shape_simple_fn((w[0], w[1]), || dist.sample(rng)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(MlpEncoder { layers, version: 0 })
    }

    /// Builds an encoder from explicit `(weight, bias)` pairs.
    pub fn from_parameters(params: Vec<(Array2<f64>, Array1<f64>)>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::invalid("encoder needs at least one layer"));
        }
        let mut prev = None;
        let mut layers = Vec::with_capacity(params.len());
        for (weight, bias) in params {
            if bias.len() != weight.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: weight.ncols(),
                    got: bias.len(),
                });
            }
            if let Some(p) = prev {
                if weight.nrows() != p {
                    return Err(Error::DimensionMismatch {
                        expected: p,
                        got: weight.nrows(),
                    });
                }
            }
            prev = Some(weight.ncols());
            let weight = weight.as_standard_layout().into_owned();
            math::ensure_finite(weight.as_slice().expect("standard layout"), "encoder weight")?;
            math::ensure_finite(bias.as_slice().expect("contiguous"), "encoder bias")?;
            layers.push(Dense { weight, bias });
        }
        Ok(MlpEncoder { layers, version: 0 })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.ncols()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.weight.ncols()))
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Flat parameter views in the order `w0, b0, w1, b1, …`.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice().expect("standard layout"), l.bias.as_slice().expect("contiguous")])
            .collect()
    }

    /// Mutable flat parameter views; invalidates outstanding forward caches.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("contiguous"),
                ]
            })
            .collect()
    }

    pub fn forward(&self, inputs: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: inputs.ncols(),
            });
        }
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut h = inputs.to_owned();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = h.dot(&layer.weight) + &layer.bias;
            if l < last {
                out.mapv_inplace(f64::tanh);
            }
            layer_inputs.push(std::mem::replace(&mut h, out));
        }
        let mut embeddings = h;
        let mut pre_norms = Vec::with_capacity(embeddings.nrows());
        for mut row in embeddings.rows_mut() {
            let n = row.dot(&row).sqrt();
            if !n.is_finite() {
                return Err(Error::NonFinite("encoder output".into()));
            }
            if n == 0.0 {
                return Err(Error::ZeroNorm);
            }
            row /= n;
            pre_norms.push(n);
        }
        let cache = ForwardCache {
            version: self.version,
            layer_inputs,
            embeddings: embeddings.clone(),
            pre_norms,
        };
        Ok((embeddings, cache))
    }

    /// Embeddings only.
    pub fn embed(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward(inputs)?.0)
    }

    /// Parameter gradients given `∂L/∂z` for every embedding in the cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, grad_embeddings: ArrayView2<'_, f64>) -> Result<EncoderGrads> {
        if cache.version != self.version {
            return Err(Error::StaleCache);
        }
        if grad_embeddings.dim() != cache.embeddings.dim() {
            return Err(Error::DimensionMismatch {
                expected: cache.embeddings.nrows(),
                got: grad_embeddings.nrows(),
            });
        }
        let mut delta = normalization_backward(&cache.embeddings, &cache.pre_norms, grad_embeddings);
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.layer_inputs[l];
            weights.push(input.t().dot(&delta));
            biases.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                let mut upstream = delta.dot(&layer.weight.t());
                // input is tanh output of the previous layer
                upstream.zip_mut_with(input, |g, &a| *g *= 1.0 - a * a);
                delta = upstream;
            }
        }
        weights.reverse();
        biases.reverse();
        Ok(EncoderGrads { weights, biases })
    }
}

/// Applies the Jacobian of `u ↦ u/‖u‖` row-wise: `(I - z zᵀ) g / ‖u‖`.
pub fn normalization_backward(
    embeddings: &Array2<f64>,
    pre_norms: &[f64],
    grad: ArrayView2<'_, f64>,
) -> Array2<f64> {
    let mut out = grad.to_owned();
    for ((mut g, z), &n) in out.rows_mut().into_iter().zip(embeddings.rows()).zip(pre_norms) {
        let radial = g.dot(&z);
        g.scaled_add(-radial, &z);
        g /= n;
    }
    out
}

/// Momentum SGD buffers for the encoder parameters and the prototypes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub encoder_velocity: Vec<Vec<f64>>,
    pub prototype_velocity: Vec<f64>,
    pub momentum: f64,
    pub lr: f64,
}

impl OptimizerState {
    pub fn new(encoder: &MlpEncoder, bank: &PrototypeBank, momentum: f64, lr: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(OptimizerState {
            encoder_velocity: encoder.param_slices().iter().map(|p| vec![0.0; p.len()]).collect(),
            prototype_velocity: vec![0.0; bank.prototypes().len()],
            momentum,
            lr,
        })
    }
}

/// `v ← m·v + g; p ← p − η·v` on one flat parameter tensor.
pub fn momentum_update(param: &mut [f64], grad: &[f64], velocity: &mut [f64], momentum: f64, lr: f64) -> Result<()> {
    if param.len() != grad.len() || param.len() != velocity.len() {
        return Err(Error::DimensionMismatch {
            expected: param.len(),
            got: grad.len().min(velocity.len()),
        });
    }
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// One momentum step over every encoder parameter.
pub fn sgd_momentum_step(encoder: &mut MlpEncoder, grads: &EncoderGrads, state: &mut OptimizerState) -> Result<()> {
    let grads = grads.slices();
    let (momentum, lr) = (state.momentum, state.lr);
    let params = encoder.param_slices_mut();
    if params.len() != grads.len() || params.len() != state.encoder_velocity.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: grads.len(),
        });
    }
    for ((p, g), v) in params.into_iter().zip(grads).zip(state.encoder_velocity.iter_mut()) {
        momentum_update(p, g, v, momentum, lr)?;
    }
    Ok(())
}

/// Momentum step on the prototypes followed by re-normalization of every row.
pub fn update_prototypes(bank: &PrototypeBank, grads: &Array2<f64>, state: &mut OptimizerState) -> Result<PrototypeBank> {
    if grads.dim() != bank.prototypes().dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.num_classes(),
            got: grads.nrows(),
        });
    }
    let mut next = bank.clone();
    let before = bank.prototypes();
    let grads = grads.as_standard_layout();
    momentum_update(
        next.prototypes_mut().as_slice_mut().expect("standard layout"),
        grads.as_slice().expect("standard layout"),
        &mut state.prototype_velocity,
        state.momentum,
        state.lr,
    )?;
    for (mut row, prev) in next.prototypes_mut().rows_mut().into_iter().zip(before.rows()) {
        // an untouched row is already unit length; re-dividing would only add rounding
        if row == prev {
            continue;
        }
        let n = row.dot(&row).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::NonFinite("prototype update".into()));
        }
        row /= n;
    }
    Ok(next)
}

/// `k` prototypes drawn uniformly on the unit sphere.
pub fn random_prototypes<R: Rng + ?Sized>(k: usize, dim: usize, rng: &mut R) -> Result<PrototypeBank> {
    let raw = Array2::from_shape_simple_fn((k, dim), || StandardNormal.sample(rng));
    PrototypeBank::from_raw(raw)
}
