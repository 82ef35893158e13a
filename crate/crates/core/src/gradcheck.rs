//! Finite-difference verification of the loss and of the encoder + loss composition.

use ndarray::{concatenate, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::encoder::{random_prototypes, EncoderGrads, MlpEncoder};
use crate::error::Result;
use crate::loss::{self, relative_error, ContrastiveBatch, LossVariant};
use crate::pseudo_label::PrototypeBank;

/// Threshold every check must stay under.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Random unit embeddings with labels drawn from `num_labels` values and weights in `[0.05, 1]`.
pub fn random_batch<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    dim: usize,
    num_labels: usize,
    temperature: f64,
) -> Result<ContrastiveBatch> {
    loop {
        let mut z: Array2<f64> = Array2::from_shape_simple_fn((n, dim), || StandardNormal.sample(rng));
        for mut row in z.rows_mut() {
            let norm = row.dot(&row).sqrt();
            row /= norm;
        }
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..num_labels)).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..=1.0)).collect();
        let batch = ContrastiveBatch::new(z, labels, weights, temperature)?;
        // redraw the rare batch where every label is unique
        if loss::build_positive_index(batch.labels()).without_positives().len() < n {
            return Ok(batch);
        }
    }
}

/// Small encoder + prototype problem with a fixed seed.
#[derive(Debug, Clone)]
pub struct EndToEndFixture {
    pub encoder: MlpEncoder,
    pub bank: PrototypeBank,
    pub inputs: Array2<f64>,
    /// Labels of the encoded inputs; prototypes append `0..K`.
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
    pub temperature: f64,
}

impl EndToEndFixture {
    pub fn seeded(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = MlpEncoder::new(&[5, 8, 8, 4], &mut rng)?;
        let bank = random_prototypes(3, 4, &mut rng)?;
        let inputs = Array2::from_shape_simple_fn((8, 5), || StandardNormal.sample(&mut rng));
        // labeled, pseudo-labeled, entropy-selected and two rejected entries
        let labels = vec![0, 1, 2, 0, 1, 2, 3 + 6, 3 + 7];
        let weights = vec![1.0, 1.0, 1.0, 1.0, 0.55, 0.8, 0.2, 0.2];
        Ok(EndToEndFixture {
            encoder,
            bank,
            inputs,
            labels,
            weights,
            temperature: 0.5,
        })
    }

    fn batch_parts(&self) -> (Vec<usize>, Vec<f64>) {
        let k = self.bank.num_classes();
        let mut labels = self.labels.clone();
        labels.extend(self.bank.class_ids());
        let mut weights = self.weights.clone();
        weights.extend(std::iter::repeat_n(1.0, k));
        (labels, weights)
    }

    /// Loss value, encoder gradients and prototype gradients.
    pub fn loss_and_grads(&self, variant: LossVariant) -> Result<(f64, EncoderGrads, Array2<f64>)> {
        let (z, cache) = self.encoder.forward(self.inputs.view())?;
        let all = concatenate(Axis(0), &[z.view(), self.bank.prototypes().view()])
            .expect("matching widths");
        let (labels, weights) = self.batch_parts();
        let batch = ContrastiveBatch::new(all, labels, weights, self.temperature)?;
        let result = loss::contrastive_loss(&batch, variant)?;
        let n = self.inputs.nrows();
        let grads = self
            .encoder
            .backward(&cache, result.grad.slice(ndarray::s![..n, ..]))?;
        let proto = result.grad.slice(ndarray::s![n.., ..]).to_owned();
        Ok((result.value, grads, proto))
    }

    fn value_with(&self, encoder: &MlpEncoder, prototypes: &Array2<f64>, variant: LossVariant) -> Result<f64> {
        let z = encoder.embed(self.inputs.view())?;
        let all = concatenate(Axis(0), &[z.view(), prototypes.view()]).expect("matching widths");
        let (labels, weights) = self.batch_parts();
        // a valid batch is only needed for its labels and weights
        let template = ContrastiveBatch::new(
            concatenate(Axis(0), &[z.view(), self.bank.prototypes().view()]).expect("matching widths"),
            labels,
            weights,
            self.temperature,
        )?;
        loss::loss_value_at(&template, all.view(), variant)
    }
}

/// Maximum relative error between analytic and central-difference gradients over
/// every encoder parameter and every prototype coordinate.
pub fn end_to_end_grad_check(fixture: &EndToEndFixture, variant: LossVariant, epsilon: f64) -> Result<f64> {
    let (_, grads, proto_grads) = fixture.loss_and_grads(variant)?;
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let mut encoder = fixture.encoder.clone();
    let prototypes = fixture.bank.prototypes().clone();
    let mut worst: f64 = 0.0;

    for (t, tensor) in analytic.iter().enumerate() {
        for (k, &a) in tensor.iter().enumerate() {
            let orig = encoder.param_slices()[t][k];
            encoder.param_slices_mut()[t][k] = orig + epsilon;
            let plus = fixture.value_with(&encoder, &prototypes, variant)?;
            encoder.param_slices_mut()[t][k] = orig - epsilon;
            let minus = fixture.value_with(&encoder, &prototypes, variant)?;
            encoder.param_slices_mut()[t][k] = orig;
            worst = worst.max(relative_error(a, (plus - minus) / (2.0 * epsilon)));
        }
    }

    let mut protos = prototypes.clone();
    for idx in 0..protos.len() {
        let (r, c) = (idx / protos.ncols(), idx % protos.ncols());
        let orig = protos[[r, c]];
        protos[[r, c]] = orig + epsilon;
        let plus = fixture.value_with(&fixture.encoder, &protos, variant)?;
        protos[[r, c]] = orig - epsilon;
        let minus = fixture.value_with(&fixture.encoder, &protos, variant)?;
        protos[[r, c]] = orig;
        worst = worst.max(relative_error(proto_grads[[r, c]], (plus - minus) / (2.0 * epsilon)));
    }
    Ok(worst)
}
