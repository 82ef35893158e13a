//! Training loop: batch assembly, pseudo-labeling, loss, momentum SGD on a
//! cosine schedule, metrics and checkpoints.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{concatenate, s, Array2, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment_rows, AugmentKind, AugmentationPolicy, Dataset, LabeledPool, UnlabeledPool};
use crate::encoder::{random_prototypes, sgd_momentum_step, update_prototypes, MlpEncoder, OptimizerState};
use crate::error::{Error, Result};
use crate::eval;
use crate::loss::{contrastive_loss, ContrastiveBatch, LossVariant};
use crate::math::ProbVector;
use crate::pseudo_label::{
    assign_pseudo_labels, class_probabilities, DecisionKind, EntropyGate, PrototypeBank, PseudoLabelDecision,
};

pub const METRICS_HEADER: &str = "step,epoch,lr,loss,confident,entropy_selected,mean_unlabeled_weight,test_acc";

/// Every tunable of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Labeled entries per step (`B`).
    pub labeled_batch: usize,
    /// Unlabeled samples per labeled sample (`μ`).
    pub mu: usize,
    pub temperature: f64,
    pub t_prime: f64,
    pub tau: f64,
    pub tau_ent: f64,
    pub w_min: f64,
    pub lambda_reject: f64,
    pub gate_enabled: bool,
    pub gate_cutoff_fraction: f64,
    /// When true, entropy-selected samples are positives for other anchors but never anchors.
    #[serde(default)]
    pub gate_positives_only: bool,
    pub method: LossVariant,
    /// When false, prototypes are positives for other entries but never anchors.
    pub prototype_anchors: bool,
    pub eta0: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub augment: AugmentationPolicy,
    pub seed: u64,
    /// Evaluate test accuracy every this many steps; the last step is always evaluated. 0 = last step only.
    pub eval_every: usize,
    /// Checkpoint cadence in steps; 0 = only at the end.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

/// Keys accepted in config files, in echo order.
pub const CONFIG_KEYS: &[&str] = &[
    "batch.labeled",
    "batch.mu",
    "loss.method",
    "loss.temperature",
    "loss.prototype_anchors",
    "gate.t_prime",
    "gate.tau",
    "gate.tau_ent",
    "gate.w_min",
    "gate.lambda_reject",
    "gate.enabled",
    "gate.cutoff_fraction",
    "gate.positives_only",
    "optim.eta0",
    "optim.momentum",
    "schedule.epochs",
    "schedule.steps_per_epoch",
    "model.hidden",
    "model.embed_dim",
    "augment.weak_sigma",
    "augment.strong_sigma",
    "augment.strong_dropout",
    "run.seed",
    "run.eval_every",
    "run.checkpoint_every",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    let value = value.trim();
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(key, v)).collect()
}

impl TrainConfig {
    /// Small runs on the synthetic fixture: seconds per seed.
    pub fn desk() -> Self {
        TrainConfig {
            labeled_batch: 12,
            mu: 4,
            temperature: 0.1,
            t_prime: 0.1,
            tau: 0.9,
            tau_ent: 0.4,
            w_min: 0.2,
            lambda_reject: 0.2,
            gate_enabled: true,
            gate_cutoff_fraction: 0.78125,
            gate_positives_only: false,
            method: LossVariant::SscE,
            prototype_anchors: true,
            eta0: 0.03,
            momentum: 0.9,
            epochs: 16,
            steps_per_epoch: 25,
            hidden: vec![32],
            embed_dim: 16,
            augment: AugmentationPolicy {
                weak_noise_sigma: 0.1,
                strong_noise_sigma: 0.5,
                strong_dropout_prob: 0.1,
            },
            seed: 0,
            eval_every: 100,
            checkpoint_every: 0,
        }
    }

    /// Full-scale batches and schedule: 64 + 448 samples per step, 256 × 1024 steps.
    pub fn full() -> Self {
        TrainConfig {
            labeled_batch: 64,
            mu: 7,
            tau_ent: 0.2,
            epochs: 256,
            steps_per_epoch: 1024,
            eval_every: 1024,
            checkpoint_every: 1024,
            ..TrainConfig::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(TrainConfig::desk()),
            "full" => Ok(TrainConfig::full()),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected desk or full)"))),
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.epochs as u64 * self.steps_per_epoch as u64
    }

    pub fn unlabeled_batch(&self) -> usize {
        self.mu * self.labeled_batch
    }

    /// Encoder layer widths for inputs of dimension `input_dim`.
    pub fn widths(&self, input_dim: usize) -> Vec<usize> {
        let mut w = vec![input_dim];
        w.extend(&self.hidden);
        w.push(self.embed_dim);
        w
    }

    /// Gate switch for a given epoch.
    pub fn gate_active(&self, epoch: u64) -> bool {
        self.gate_enabled && (epoch as f64) < self.gate_cutoff_fraction * self.epochs as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.labeled_batch < 1 {
            return bad("batch.labeled must be at least 1".into());
        }
        if self.mu < 1 {
            return bad("batch.mu must be at least 1".into());
        }
        for (name, t) in [("loss.temperature", self.temperature), ("gate.t_prime", self.t_prime)] {
            if !(t > 0.0) || !t.is_finite() {
                return bad(format!("{name} must be positive, got {t}"));
            }
        }
        if !(self.gate_cutoff_fraction > 0.0 && self.gate_cutoff_fraction <= 1.0) {
            return bad(format!("gate.cutoff_fraction must lie in (0, 1], got {}", self.gate_cutoff_fraction));
        }
        if !(self.lambda_reject > 0.0 && self.lambda_reject <= 1.0) {
            return bad(format!("gate.lambda_reject must lie in (0, 1], got {}", self.lambda_reject));
        }
        if !(self.eta0 >= 0.0) || !self.eta0.is_finite() {
            return bad(format!("optim.eta0 must be non-negative, got {}", self.eta0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("optim.momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.embed_dim < 2 || self.hidden.contains(&0) {
            return bad("model widths must be positive and model.embed_dim at least 2".into());
        }
        if self.epochs > 0 && self.steps_per_epoch == 0 {
            return bad("schedule.steps_per_epoch must be positive".into());
        }
        EntropyGate::new(self.tau, self.tau_ent, 2, self.w_min).map_err(|e| Error::Config(e.to_string()))?;
        self.augment.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let a = &self.augment;
        Ok(match key {
            "batch.labeled" => self.labeled_batch.to_string(),
            "batch.mu" => self.mu.to_string(),
            "loss.method" => self.method.to_string(),
            "loss.temperature" => format!("{:?}", self.temperature),
            "loss.prototype_anchors" => self.prototype_anchors.to_string(),
            "gate.t_prime" => format!("{:?}", self.t_prime),
            "gate.tau" => format!("{:?}", self.tau),
            "gate.tau_ent" => format!("{:?}", self.tau_ent),
            "gate.w_min" => format!("{:?}", self.w_min),
            "gate.lambda_reject" => format!("{:?}", self.lambda_reject),
            "gate.enabled" => self.gate_enabled.to_string(),
            "gate.cutoff_fraction" => format!("{:?}", self.gate_cutoff_fraction),
            "gate.positives_only" => self.gate_positives_only.to_string(),
            "optim.eta0" => format!("{:?}", self.eta0),
            "optim.momentum" => format!("{:?}", self.momentum),
            "schedule.epochs" => self.epochs.to_string(),
            "schedule.steps_per_epoch" => self.steps_per_epoch.to_string(),
            "model.hidden" => self.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","),
            "model.embed_dim" => self.embed_dim.to_string(),
            "augment.weak_sigma" => format!("{:?}", a.weak_noise_sigma),
            "augment.strong_sigma" => format!("{:?}", a.strong_noise_sigma),
            "augment.strong_dropout" => format!("{:?}", a.strong_dropout_prob),
            "run.seed" => self.seed.to_string(),
            "run.eval_every" => self.eval_every.to_string(),
            "run.checkpoint_every" => self.checkpoint_every.to_string(),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let a = &mut self.augment;
        match key {
            "batch.labeled" => self.labeled_batch = parse_value(key, value)?,
            "batch.mu" => self.mu = parse_value(key, value)?,
            "loss.method" => self.method = parse_value(key, value)?,
            "loss.temperature" => self.temperature = parse_value(key, value)?,
            "loss.prototype_anchors" => self.prototype_anchors = parse_value(key, value)?,
            "gate.t_prime" => self.t_prime = parse_value(key, value)?,
            "gate.tau" => self.tau = parse_value(key, value)?,
            "gate.tau_ent" => self.tau_ent = parse_value(key, value)?,
            "gate.w_min" => self.w_min = parse_value(key, value)?,
            "gate.lambda_reject" => self.lambda_reject = parse_value(key, value)?,
            "gate.enabled" => self.gate_enabled = parse_value(key, value)?,
            "gate.cutoff_fraction" => self.gate_cutoff_fraction = parse_value(key, value)?,
            "gate.positives_only" => self.gate_positives_only = parse_value(key, value)?,
            "optim.eta0" => self.eta0 = parse_value(key, value)?,
            "optim.momentum" => self.momentum = parse_value(key, value)?,
            "schedule.epochs" => self.epochs = parse_value(key, value)?,
            "schedule.steps_per_epoch" => self.steps_per_epoch = parse_value(key, value)?,
            "model.hidden" => self.hidden = parse_list(key, value)?,
            "model.embed_dim" => self.embed_dim = parse_value(key, value)?,
            "augment.weak_sigma" => a.weak_noise_sigma = parse_value(key, value)?,
            "augment.strong_sigma" => a.strong_noise_sigma = parse_value(key, value)?,
            "augment.strong_dropout" => a.strong_dropout_prob = parse_value(key, value)?,
            "run.seed" => self.seed = parse_value(key, value)?,
            "run.eval_every" => self.eval_every = parse_value(key, value)?,
            "run.checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// `key = value` pairs for every key.
    pub fn entries(&self) -> Vec<(String, String)> {
        CONFIG_KEYS
            .iter()
            .map(|k| (k.to_string(), self.get(k).expect("known key")))
            .collect()
    }

    /// Config file text; parsing it back yields an equal config.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Applies `section.key = value` lines on top of `self`. Blank lines and `#` comments are skipped.
    pub fn apply_config_str(&mut self, text: &str, source: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |msg: String| Error::Parse {
                path: source.to_string(),
                line: n + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| perr("expected `section.key = value`".into()))?;
            self.set(key.trim(), value.trim()).map_err(|e| perr(e.to_string()))?;
        }
        Ok(())
    }

    pub fn load(path: &Path, base: TrainConfig) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = base;
        cfg.apply_config_str(&text, &path.display().to_string())?;
        Ok(cfg)
    }
}

/// `η₀·cos(7πt / (16·T_total))`.
pub fn cosine_lr(t: u64, total_steps: u64, eta0: f64) -> Result<f64> {
    if total_steps == 0 || t > total_steps {
        return Err(Error::invalid(format!(
            "step {t} outside schedule of {total_steps} steps"
        )));
    }
    let x = 7.0 * std::f64::consts::PI * t as f64 / (16.0 * total_steps as f64);
    Ok(eta0 * x.cos())
}

/// Origin of each entry in an assembled batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntrySource {
    Labeled,
    /// First strong view of the given unlabeled draw.
    StrongA(usize),
    /// Second strong view of the given unlabeled draw.
    StrongB(usize),
    Prototype,
}

#[derive(Debug, Clone)]
pub struct AssembledBatch {
    pub batch: ContrastiveBatch,
    pub decisions: Vec<PseudoLabelDecision>,
    pub sources: Vec<EntrySource>,
    /// Encoder inputs for the first `B + 2μB` entries, in batch order.
    pub encoder_inputs: Array2<f64>,
}

/// `count` indices into a pool of `len`: without replacement when the pool is large enough.
pub fn draw_indices<R: Rng + ?Sized>(rng: &mut R, len: usize, count: usize) -> Vec<usize> {
    if len >= count {
        index::sample(rng, len, count).into_vec()
    } else {
        (0..count).map(|_| rng.random_range(0..len)).collect()
    }
}

/// Class probabilities of each row under the prototype bank.
pub fn prototype_probabilities(embeddings: &Array2<f64>, bank: &PrototypeBank, t_prime: f64) -> Result<Vec<ProbVector>> {
    embeddings
        .rows()
        .into_iter()
        .map(|z| class_probabilities(z.as_slice().expect("standard layout"), bank, t_prime))
        .collect()
}

/// Samples and embeds one step's entries. The weak view only feeds pseudo-labeling.
#[allow(clippy::too_many_arguments)]
pub fn assemble_batch<R: Rng + ?Sized>(
    encoder: &MlpEncoder,
    bank: &PrototypeBank,
    labeled: &LabeledPool,
    unlabeled: &UnlabeledPool,
    config: &TrainConfig,
    gate_enabled: bool,
    rng: &mut R,
) -> Result<AssembledBatch> {
    if labeled.labels.is_empty() || unlabeled.features.nrows() == 0 {
        return Err(Error::invalid("labeled and unlabeled pools must be non-empty"));
    }
    let k = bank.num_classes();
    let (b, ub) = (config.labeled_batch, config.unlabeled_batch());
    let li = draw_indices(rng, labeled.labels.len(), b);
    let ui = draw_indices(rng, unlabeled.features.nrows(), ub);
    let x = labeled.features.select(Axis(0), &li);
    let u = unlabeled.features.select(Axis(0), &ui);
    let weak = augment_rows(&u, &config.augment, AugmentKind::Weak, rng);
    let strong_a = augment_rows(&u, &config.augment, AugmentKind::Strong, rng);
    let strong_b = augment_rows(&u, &config.augment, AugmentKind::Strong, rng);

    let gate = EntropyGate::new(config.tau, config.tau_ent, k, config.w_min)?;
    let z_w = encoder.embed(weak.view())?;
    let probs = prototype_probabilities(&z_w, bank, config.t_prime)?;
    let decisions = assign_pseudo_labels(&probs, &gate, config.lambda_reject, gate_enabled)?;

    let encoder_inputs = concatenate(Axis(0), &[x.view(), strong_a.view(), strong_b.view()]).expect("equal widths");
    let z = encoder.embed(encoder_inputs.view())?;
    let embeddings = concatenate(Axis(0), &[z.view(), bank.prototypes().view()]).expect("equal widths");

    let mut labels: Vec<usize> = li.iter().map(|&i| labeled.labels[i]).collect();
    let mut weights = vec![1.0; b];
    let mut sources = vec![EntrySource::Labeled; b];
    for view in 0..2 {
        for d in &decisions {
            labels.push(d.assigned_label);
            weights.push(d.weight);
            sources.push(if view == 0 {
                EntrySource::StrongA(d.sample_index)
            } else {
                EntrySource::StrongB(d.sample_index)
            });
        }
    }
    labels.extend(bank.class_ids());
    weights.extend(std::iter::repeat_n(1.0, k));
    sources.extend(std::iter::repeat_n(EntrySource::Prototype, k));

    let mut batch = ContrastiveBatch::new(embeddings, labels, weights, config.temperature)?;
    if !config.prototype_anchors || config.gate_positives_only {
        let mask = sources
            .iter()
            .map(|s| match *s {
                EntrySource::Labeled => true,
                EntrySource::StrongA(i) | EntrySource::StrongB(i) => {
                    !(config.gate_positives_only && decisions[i].kind == DecisionKind::EntropySelected)
                }
                EntrySource::Prototype => config.prototype_anchors,
            })
            .collect();
        batch = batch.with_anchor_mask(mask)?;
    }
    Ok(AssembledBatch {
        batch,
        decisions,
        sources,
        encoder_inputs,
    })
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss: f64,
    pub confident: usize,
    pub entropy_selected: usize,
    pub mean_unlabeled_weight: f64,
    pub test_acc: Option<f64>,
}

impl MetricRecord {
    pub fn csv_row(&self) -> String {
        let acc = self.test_acc.map(|a| format!("{a:?}")).unwrap_or_default();
        format!(
            "{},{},{:?},{:?},{},{},{:?},{}",
            self.step, self.epoch, self.lr, self.loss, self.confident, self.entropy_selected, self.mean_unlabeled_weight, acc
        )
    }
}

/// Metrics CSV with the config echoed as leading comment lines.
pub fn metrics_csv(config: &TrainConfig, records: &[MetricRecord]) -> String {
    let mut out = String::new();
    for (k, v) in config.entries() {
        let _ = writeln!(out, "# {k} = {v}");
    }
    let _ = writeln!(out, "{METRICS_HEADER}");
    for r in records {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

/// Parses a metrics CSV, skipping comment lines.
pub fn parse_metrics_csv(text: &str, source: &str) -> Result<Vec<MetricRecord>> {
    let mut records = Vec::new();
    let mut seen_header = false;
    for (n, line) in text.lines().enumerate() {
        let perr = |msg: String| Error::Parse {
            path: source.to_string(),
            line: n + 1,
            msg,
        };
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        if !seen_header {
            if line != METRICS_HEADER {
                return Err(perr(format!("expected header `{METRICS_HEADER}`")));
            }
            seen_header = true;
            continue;
        }
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 8 {
            return Err(perr(format!("expected 8 columns, found {}", c.len())));
        }
        let num = |i: usize| -> Result<f64> { c[i].parse().map_err(|_| perr(format!("bad number `{}`", c[i]))) };
        let int = |i: usize| -> Result<u64> { c[i].parse().map_err(|_| perr(format!("bad integer `{}`", c[i]))) };
        records.push(MetricRecord {
            step: int(0)?,
            epoch: int(1)?,
            lr: num(2)?,
            loss: num(3)?,
            confident: int(4)? as usize,
            entropy_selected: int(5)? as usize,
            mean_unlabeled_weight: num(6)?,
            test_acc: if c[7].is_empty() { None } else { Some(num(7)?) },
        });
    }
    if !seen_header {
        return Err(Error::Parse {
            path: source.to_string(),
            line: 1,
            msg: "missing header".into(),
        });
    }
    Ok(records)
}

/// ChaCha position, enough to resume the stream exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal string: JSON numbers cannot carry 128 bits portably.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng position `{}`", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Everything needed to continue a run bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config: TrainConfig,
    pub encoder: MlpEncoder,
    pub bank: PrototypeBank,
    pub optimizer: OptimizerState,
    /// Global steps completed.
    pub step: u64,
    pub rng: RngState,
    pub history: Vec<MetricRecord>,
}

impl TrainState {
    /// Fresh model: initialization draws from stream 0 of the seed, training from stream 1.
    pub fn init(config: &TrainConfig, input_dim: usize, num_classes: usize) -> Result<Self> {
        config.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = MlpEncoder::new(&config.widths(input_dim), &mut init_rng)?;
        let bank = random_prototypes(num_classes, config.embed_dim, &mut init_rng)?;
        let optimizer = OptimizerState::new(&encoder, &bank, config.momentum, config.eta0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(TrainState {
            config: config.clone(),
            encoder,
            bank,
            optimizer,
            step: 0,
            rng: RngState::capture(&rng),
            history: Vec::new(),
        })
    }

    pub fn epoch(&self) -> u64 {
        if self.config.steps_per_epoch == 0 {
            0
        } else {
            self.step / self.config.steps_per_epoch as u64
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    /// Atomic write (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::data::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn diagnostic_dump(step: u64, assembled: &AssembledBatch) -> String {
    let b = &assembled.batch;
    let mut out = format!("step {step}: {} entries, temperature {:?}\n", b.len(), b.temperature());
    out.push_str("entry,source,label,weight,embedding\n");
    for i in 0..b.len() {
        let emb: Vec<String> = b.embeddings().row(i).iter().map(|x| format!("{x:?}")).collect();
        let _ = writeln!(
            out,
            "{i},{:?},{},{:?},{}",
            assembled.sources[i],
            b.labels()[i],
            b.weights()[i],
            emb.join(" ")
        );
    }
    out
}

/// One optimizer step; appends and returns its metrics record (without test accuracy).
pub fn train_step(state: &mut TrainState, labeled: &LabeledPool, unlabeled: &UnlabeledPool) -> Result<MetricRecord> {
    let config = state.config.clone();
    let total = config.total_steps();
    let step = state.step;
    if step >= total {
        return Err(Error::invalid(format!("run already finished at step {step}")));
    }
    let epoch = state.epoch();
    let lr = cosine_lr(step, total, config.eta0)?;
    let mut rng = state.rng.restore()?;
    let assembled = assemble_batch(
        &state.encoder,
        &state.bank,
        labeled,
        unlabeled,
        &config,
        config.gate_active(epoch),
        &mut rng,
    )?;

    let result = match contrastive_loss(&assembled.batch, config.method) {
        Ok(r) if r.value.is_finite() => r,
        Ok(_) | Err(Error::NonFinite(_)) => {
            return Err(Error::NonFiniteLoss {
                step,
                dump: diagnostic_dump(step, &assembled),
            })
        }
        Err(e) => return Err(e),
    };

    let n_enc = assembled.encoder_inputs.nrows();
    let (_, cache) = state.encoder.forward(assembled.encoder_inputs.view())?;
    let grads = state.encoder.backward(&cache, result.grad.slice(s![..n_enc, ..]))?;
    let proto_grads = result.grad.slice(s![n_enc.., ..]).to_owned();

    state.optimizer.lr = lr;
    sgd_momentum_step(&mut state.encoder, &grads, &mut state.optimizer)?;
    state.bank = update_prototypes(&state.bank, &proto_grads, &mut state.optimizer)?;

    let count = |k: DecisionKind| assembled.decisions.iter().filter(|d| d.kind == k).count();
    let mean_w = assembled.decisions.iter().map(|d| d.weight).sum::<f64>() / assembled.decisions.len() as f64;
    let record = MetricRecord {
        step,
        epoch,
        lr,
        loss: result.value,
        confident: count(DecisionKind::Confident),
        entropy_selected: count(DecisionKind::EntropySelected),
        mean_unlabeled_weight: mean_w,
        test_acc: None,
    };
    state.rng = RngState::capture(&rng);
    state.step += 1;
    state.history.push(record.clone());
    Ok(record)
}

/// Where and how often [`train`] writes checkpoints, and an optional early stop.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions<'a> {
    pub checkpoint_path: Option<&'a Path>,
    /// Stop once this many global steps are complete (for interrupted runs).
    pub stop_at: Option<u64>,
}

/// Runs (or continues) a training run; `observe` sees every record as it is produced.
pub fn train_from(
    mut state: TrainState,
    dataset: &Dataset,
    options: &TrainOptions<'_>,
    mut observe: impl FnMut(&MetricRecord),
) -> Result<TrainState> {
    let config = state.config.clone();
    config.validate()?;
    let total = config.total_steps();
    if total == 0 {
        return Ok(state);
    }
    let labeled = dataset.labeled_pool();
    let unlabeled = dataset.unlabeled_pool();
    let (test_x, test_y) = dataset.test_split();
    if labeled.labels.is_empty() || unlabeled.features.nrows() == 0 || test_y.is_empty() {
        return Err(Error::invalid("dataset needs labeled, unlabeled and test rows"));
    }
    let end = options.stop_at.map_or(total, |s| s.min(total));
    while state.step < end {
        train_step(&mut state, &labeled, &unlabeled)?;
        let done = state.step;
        let eval_now = done == total || (config.eval_every > 0 && done.is_multiple_of(config.eval_every as u64));
        if eval_now {
            let acc = eval::evaluate(&state.encoder, &state.bank, test_x.view(), &test_y, config.t_prime)?;
            state.history.last_mut().expect("just pushed").test_acc = Some(acc);
        }
        observe(state.history.last().expect("just pushed"));
        if let Some(path) = options.checkpoint_path {
            if config.checkpoint_every > 0 && done.is_multiple_of(config.checkpoint_every as u64) {
                state.save(path)?;
            }
        }
    }
    if let Some(path) = options.checkpoint_path {
        state.save(path)?;
    }
    Ok(state)
}

/// Fresh run from `config` on `dataset`.
pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<TrainState> {
    let state = TrainState::init(config, dataset.dim(), dataset.num_classes)?;
    train_from(state, dataset, &TrainOptions::default(), |_| {})
}
