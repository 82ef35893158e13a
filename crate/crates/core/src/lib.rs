//! Entropy-weighted semi-supervised contrastive learning.
//!
//! The crate is organised bottom-up:
//!
//! * [`math`]: softmax, entropy, normalization.
//! * [`pseudo_label`]: prototype probabilities, threshold and entropy-gated pseudo-labels.
//! * [`loss`]: the anchor-weighted (SSC) and pair-weighted (SSC-E) contrastive losses.
//! * [`encoder`]: MLP encoder with exact backprop, momentum SGD, prototype updates.
//! * [`gradcheck`]: finite-difference verification through the full model.
//! * [`data`]: synthetic Gaussian clusters, splits, augmentations, CSV persistence.
//! * [`trainer`]: batch assembly, the training loop, configs and checkpoints.
//! * [`eval`]: test accuracy and pseudo-label quality.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod math;
pub mod pseudo_label;
pub mod trainer;

pub use error::{Error, Result};
pub use loss::{ContrastiveBatch, LossResult, LossVariant};
pub use pseudo_label::{DecisionKind, EntropyGate, PrototypeBank, PseudoLabelDecision};
