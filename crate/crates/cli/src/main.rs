//! `essc`: data generation, training, evaluation and diagnostics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use essc_core::data::{self, ClusterSpec, Split};
use essc_core::gradcheck::{self, EndToEndFixture, GRADCHECK_TOLERANCE};
use essc_core::math::{self, ProbVector};
use essc_core::pseudo_label::{assign_pseudo_labels, EntropyGate};
use essc_core::trainer::{self, TrainConfig, TrainOptions, TrainState};
use essc_core::{eval, loss, Error, LossVariant};

#[derive(Parser)]
#[command(name = "essc", version, about = "Entropy-weighted semi-supervised contrastive learning on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Gaussian-cluster dataset with labeled/unlabeled/test splits.
    GenData(GenDataArgs),
    /// Train an encoder and prototypes on a dataset CSV.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset CSV.
    Eval(EvalArgs),
    /// Finite-difference check of the loss gradients and the full model.
    Gradcheck(GradcheckArgs),
    /// Run the pseudo-label gate over probability rows.
    GateSim(GateSimArgs),
    /// Tabulate final accuracies from several metrics logs.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 504)]
    per_class: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    #[arg(long, default_value_t = 4)]
    labels_per_class: usize,
    /// Fraction of the non-labeled rows placed in the test split.
    #[arg(long, default_value_t = 2.0 / 3.0)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write a trainer-facing copy with unlabeled labels replaced by -1.
    #[arg(long)]
    unlabeled_view: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Full,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Directory for metrics.csv, checkpoint.json, eval.csv and eval.txt.
    #[arg(long)]
    out_dir: PathBuf,
    /// Base settings; a config file and then explicit flags override them.
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// `section.key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from a checkpoint instead of starting fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many global steps (the run can be resumed later).
    #[arg(long)]
    stop_at: Option<u64>,
    #[arg(long, default_value = "ssc-e")]
    method: LossVariant,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    epochs: usize,
    #[arg(long, default_value_t = 25)]
    steps_per_epoch: usize,
    #[arg(long, default_value_t = 12)]
    batch: usize,
    #[arg(long, default_value_t = 4)]
    mu: usize,
    #[arg(long, default_value_t = 0.03)]
    eta0: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 0.1)]
    temperature: f64,
    #[arg(long, default_value_t = 0.1)]
    t_prime: f64,
    #[arg(long, default_value_t = 0.9)]
    tau: f64,
    #[arg(long, default_value_t = 0.4)]
    tau_ent: f64,
    #[arg(long, default_value_t = 0.2)]
    w_min: f64,
    #[arg(long, default_value_t = 0.2)]
    lambda_reject: f64,
    /// Entropy gate on or off.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    gate: bool,
    #[arg(long, default_value_t = 0.78125)]
    gate_cutoff_fraction: f64,
    /// Entropy-selected samples act only as positives, never as anchors.
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    positives_only: bool,
    #[arg(long, default_value_t = 100)]
    eval_every: usize,
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    /// Print every metrics record to stderr.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Directory for eval.csv and eval.txt; printed only when absent.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Pseudo-label the unlabeled pool with the entropy gate on or off.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    gate: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantChoice {
    Ssc,
    SscE,
    Both,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, value_enum, default_value = "both")]
    variant: VariantChoice,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random loss-only batches per variant.
    #[arg(long, default_value_t = 20)]
    batches: usize,
}

#[derive(Args)]
struct GateSimArgs {
    /// CSV of probability rows (optional `p_0,...` header, `#` comments). Synthetic rows when absent.
    #[arg(long)]
    probs: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Scale of the random logits of synthetic rows; larger is more peaked.
    #[arg(long, default_value_t = 3.0)]
    sharpness: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// One or more thresholds, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.9")]
    tau: Vec<f64>,
    /// One or more entropy fractions, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.4")]
    tau_ent: Vec<f64>,
    #[arg(long, default_value_t = 0.2)]
    w_min: f64,
    #[arg(long, default_value_t = 0.2)]
    lambda_reject: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    gate: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Metrics logs written by `train`.
    #[arg(required = true, num_args = 2..)]
    logs: Vec<PathBuf>,
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

/// Failures mapped to exit codes: 1 validation/config, 2 IO, 3 numerical.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Io(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match &e {
            Error::Io { .. } => CliError::Io(e.to_string()),
            Error::NonFiniteLoss { dump, .. } => CliError::Numeric(format!("{e}\n{dump}")),
            Error::NonFinite(_) | Error::ZeroNorm | Error::ZeroNormalizer => CliError::Numeric(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn write_file(path: &Path, text: &str) -> CliResult {
    data::write_atomic(path, text.as_bytes()).map_err(CliError::from)
}

fn echo(pairs: &[(String, String)]) {
    for (k, v) in pairs {
        println!("# {k} = {v}");
    }
}

fn pairs<const N: usize>(items: [(&str, String); N]) -> Vec<(String, String)> {
    items.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn gen_data(a: &GenDataArgs) -> CliResult {
    let spec = ClusterSpec {
        num_classes: a.classes,
        dim: a.dim,
        per_class: a.per_class,
        sigma: a.sigma,
        separation: a.separation,
        seed: a.seed,
    };
    let resolved = pairs([
        ("data.classes", a.classes.to_string()),
        ("data.dim", a.dim.to_string()),
        ("data.per_class", a.per_class.to_string()),
        ("data.sigma", format!("{:?}", a.sigma)),
        ("data.separation", format!("{:?}", a.separation)),
        ("data.labels_per_class", a.labels_per_class.to_string()),
        ("data.test_fraction", format!("{:?}", a.test_fraction)),
        ("data.seed", a.seed.to_string()),
    ]);
    echo(&resolved);
    let ds = data::split(&data::generate_gaussian_clusters(&spec)?, a.labels_per_class, a.test_fraction, a.seed)?;
    let comments: Vec<String> = resolved.iter().map(|(k, v)| format!("{k} = {v}")).collect();
    data::save_csv(&ds, &a.out, &comments)?;
    if let Some(view) = &a.unlabeled_view {
        data::save_unlabeled_view_csv(&ds, view, &comments)?;
    }
    println!(
        "rows {} labeled {} unlabeled {} test {}",
        ds.len(),
        ds.count(Split::Labeled),
        ds.count(Split::Unlabeled),
        ds.count(Split::Test)
    );
    Ok(())
}

fn explicit(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

/// Preset, then config file, then flags given on the command line.
fn resolve_train_config(a: &TrainArgs, m: &ArgMatches) -> CliResult<TrainConfig> {
    let base = match a.preset {
        Preset::Desk => TrainConfig::desk(),
        Preset::Full => TrainConfig::full(),
    };
    let mut cfg = match &a.config {
        Some(path) => TrainConfig::load(path, base)?,
        None => base,
    };
    for (id, key, value) in train_overrides(a) {
        if explicit(m, id) {
            cfg.set(key, &value)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Flag id, config key and flag value for every setting flag.
fn train_overrides(a: &TrainArgs) -> [(&'static str, &'static str, String); 19] {
    [
        ("method", "loss.method", a.method.to_string()),
        ("seed", "run.seed", a.seed.to_string()),
        ("epochs", "schedule.epochs", a.epochs.to_string()),
        ("steps_per_epoch", "schedule.steps_per_epoch", a.steps_per_epoch.to_string()),
        ("batch", "batch.labeled", a.batch.to_string()),
        ("mu", "batch.mu", a.mu.to_string()),
        ("eta0", "optim.eta0", a.eta0.to_string()),
        ("momentum", "optim.momentum", a.momentum.to_string()),
        ("temperature", "loss.temperature", a.temperature.to_string()),
        ("t_prime", "gate.t_prime", a.t_prime.to_string()),
        ("tau", "gate.tau", a.tau.to_string()),
        ("tau_ent", "gate.tau_ent", a.tau_ent.to_string()),
        ("w_min", "gate.w_min", a.w_min.to_string()),
        ("lambda_reject", "gate.lambda_reject", a.lambda_reject.to_string()),
        ("gate", "gate.enabled", a.gate.to_string()),
        ("gate_cutoff_fraction", "gate.cutoff_fraction", a.gate_cutoff_fraction.to_string()),
        ("positives_only", "gate.positives_only", a.positives_only.to_string()),
        ("eval_every", "run.eval_every", a.eval_every.to_string()),
        ("checkpoint_every", "run.checkpoint_every", a.checkpoint_every.to_string()),
    ]
}

fn dataset_comments(path: &Path) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.trim_start_matches('#').trim().to_string())
        .collect())
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn write_report(dir: &Path, report: &eval::EvalReport) -> CliResult {
    write_file(&dir.join("eval.csv"), &report.csv())?;
    write_file(&dir.join("eval.txt"), &report.summary())
}

fn train(a: &TrainArgs, m: &ArgMatches) -> CliResult {
    let ds = data::load_csv(&a.data)?;
    let state = match &a.resume {
        Some(path) => {
            let state = TrainState::load(path)?;
            let setting_flags = train_overrides(a).map(|(id, _, _)| id);
            if ["preset", "config"].into_iter().chain(setting_flags).any(|id| explicit(m, id)) {
                return Err(CliError::Usage(
                    "--resume takes its settings from the checkpoint; drop the other training flags".into(),
                ));
            }
            state
        }
        None => {
            let cfg = resolve_train_config(a, m)?;
            TrainState::init(&cfg, ds.dim(), ds.num_classes)?
        }
    };
    let cfg = state.config.clone();
    let data_comments = dataset_comments(&a.data)?;
    for c in &data_comments {
        println!("# {c}");
    }
    echo(&cfg.entries());
    create_dir(&a.out_dir)?;

    let checkpoint = a.out_dir.join("checkpoint.json");
    let options = TrainOptions {
        checkpoint_path: Some(&checkpoint),
        stop_at: a.stop_at,
    };
    let verbose = a.verbose;
    let state = trainer::train_from(state, &ds, &options, |r| {
        if verbose {
            eprintln!("{}", r.csv_row());
        }
    })?;

    let mut metrics = String::new();
    for c in &data_comments {
        let _ = writeln!(metrics, "# {c}");
    }
    metrics.push_str(&trainer::metrics_csv(&cfg, &state.history));
    write_file(&a.out_dir.join("metrics.csv"), &metrics)?;

    if state.step == cfg.total_steps() && cfg.total_steps() > 0 {
        let report = eval::report(&state.encoder, &state.bank, &ds, &cfg, cfg.gate_enabled)?;
        write_report(&a.out_dir, &report)?;
        print!("{}", report.summary());
    } else {
        println!("stopped at step {} of {}", state.step, cfg.total_steps());
    }
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> CliResult {
    let state = TrainState::load(&a.checkpoint)?;
    let ds = data::load_csv(&a.data)?;
    echo(&pairs([
        ("eval.checkpoint", a.checkpoint.display().to_string()),
        ("eval.data", a.data.display().to_string()),
        ("eval.gate", a.gate.to_string()),
        ("eval.step", state.step.to_string()),
    ]));
    let report = eval::report(&state.encoder, &state.bank, &ds, &state.config, a.gate)?;
    if let Some(dir) = &a.out_dir {
        create_dir(dir)?;
        write_report(dir, &report)?;
    }
    print!("{}", report.summary());
    Ok(())
}

fn gradcheck_cmd(a: &GradcheckArgs) -> CliResult {
    if a.eps <= 0.0 || !a.eps.is_finite() {
        return Err(CliError::Usage(format!("--eps must be positive, got {}", a.eps)));
    }
    echo(&pairs([
        ("gradcheck.eps", format!("{:?}", a.eps)),
        ("gradcheck.seed", a.seed.to_string()),
        ("gradcheck.batches", a.batches.to_string()),
    ]));
    let variants: Vec<LossVariant> = match a.variant {
        VariantChoice::Ssc => vec![LossVariant::Ssc],
        VariantChoice::SscE => vec![LossVariant::SscE],
        VariantChoice::Both => vec![LossVariant::Ssc, LossVariant::SscE],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let batches: Vec<_> = (0..a.batches)
        .map(|_| gradcheck::random_batch(&mut rng, 8, 4, 3, 0.5))
        .collect::<Result<_, _>>()?;
    let fixture = EndToEndFixture::seeded(a.seed)?;
    let mut failed = false;
    println!("check,variant,max_rel_error,status");
    for v in variants {
        let mut worst: f64 = 0.0;
        for b in &batches {
            worst = worst.max(loss::grad_check(b, v, a.eps)?);
        }
        let e2e = gradcheck::end_to_end_grad_check(&fixture, v, a.eps)?;
        for (name, err) in [("loss", worst), ("end_to_end", e2e)] {
            let ok = err < GRADCHECK_TOLERANCE;
            failed |= !ok;
            println!("{name},{v},{err:e},{}", if ok { "pass" } else { "FAIL" });
        }
    }
    if failed {
        return Err(CliError::Numeric(format!("relative error above {GRADCHECK_TOLERANCE:e}")));
    }
    Ok(())
}

fn read_probs(path: &Path) -> CliResult<Vec<ProbVector>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    let mut width = None;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("p_") {
            continue;
        }
        let at = |msg: String| CliError::Usage(format!("{}:{}: {msg}", path.display(), n + 1));
        let values = line
            .split(',')
            .map(|c| c.trim().parse::<f64>().map_err(|_| at(format!("non-numeric value `{c}`"))))
            .collect::<CliResult<Vec<f64>>>()?;
        if *width.get_or_insert(values.len()) != values.len() {
            return Err(at(format!("expected {} values, found {}", width.unwrap_or(0), values.len())));
        }
        rows.push(ProbVector::new(values).map_err(|e| at(e.to_string()))?);
    }
    if rows.is_empty() {
        return Err(CliError::Usage(format!("{}: no probability rows", path.display())));
    }
    Ok(rows)
}

fn synthetic_probs(a: &GateSimArgs) -> CliResult<Vec<ProbVector>> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    (0..a.samples)
        .map(|_| {
            let logits: Vec<f64> = (0..a.classes)
                .map(|_| a.sharpness * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect();
            math::stable_softmax(&logits, 1.0).map_err(CliError::from)
        })
        .collect()
}

fn gate_sim(a: &GateSimArgs) -> CliResult {
    let probs = match &a.probs {
        Some(p) => read_probs(p)?,
        None => synthetic_probs(a)?,
    };
    let k = probs[0].len();
    echo(&pairs([
        ("gate_sim.source", a.probs.as_ref().map_or("synthetic".into(), |p| p.display().to_string())),
        ("gate_sim.classes", k.to_string()),
        ("gate_sim.samples", probs.len().to_string()),
        ("gate_sim.sharpness", format!("{:?}", a.sharpness)),
        ("gate_sim.seed", a.seed.to_string()),
        ("gate_sim.w_min", format!("{:?}", a.w_min)),
        ("gate_sim.lambda_reject", format!("{:?}", a.lambda_reject)),
        ("gate_sim.gate", a.gate.to_string()),
    ]));
    let mut out = String::from("tau,tau_ent,sample,kind,label,weight,entropy,max_prob\n");
    println!("tau,tau_ent,confident,entropy_selected,rejected,coverage");
    for &tau in &a.tau {
        for &tau_ent in &a.tau_ent {
            let gate = EntropyGate::new(tau, tau_ent, k, a.w_min)?;
            let decisions = assign_pseudo_labels(&probs, &gate, a.lambda_reject, a.gate)?;
            let mut counts = [0usize; 3];
            for d in &decisions {
                counts[d.kind as usize] += 1;
                let _ = writeln!(
                    out,
                    "{tau:?},{tau_ent:?},{},{},{},{:?},{:?},{:?}",
                    d.sample_index,
                    d.kind.as_str(),
                    d.assigned_label,
                    d.weight,
                    d.entropy,
                    d.max_prob
                );
            }
            let coverage = (counts[0] + counts[1]) as f64 / decisions.len() as f64;
            println!("{tau:?},{tau_ent:?},{},{},{},{coverage:.4}", counts[0], counts[1], counts[2]);
        }
    }
    if let Some(path) = &a.out {
        write_file(path, &out)?;
    }
    Ok(())
}

/// Comment-header settings and final test accuracy of one metrics log.
struct RunSummary {
    method: String,
    labels_per_class: String,
    seed: String,
    final_acc: f64,
}

fn summarize_log(path: &Path) -> CliResult<RunSummary> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut header = BTreeMap::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        if let Some((k, v)) = line.trim_start_matches('#').split_once('=') {
            header.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let records = trainer::parse_metrics_csv(&text, &path.display().to_string())?;
    let final_acc = records
        .iter()
        .rev()
        .find_map(|r| r.test_acc)
        .ok_or_else(|| CliError::Usage(format!("{}: no evaluated step", path.display())))?;
    let get = |k: &str| header.get(k).cloned().unwrap_or_else(|| "?".into());
    Ok(RunSummary {
        method: get("loss.method"),
        labels_per_class: get("data.labels_per_class"),
        seed: get("run.seed"),
        final_acc,
    })
}

fn compare(a: &CompareArgs) -> CliResult {
    let missing: Vec<String> = a.logs.iter().filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
    if !missing.is_empty() {
        return Err(CliError::Io(format!("missing logs: {}", missing.join(", "))));
    }
    let runs = a.logs.iter().map(|p| summarize_log(p)).collect::<CliResult<Vec<_>>>()?;
    let mut seeds: Vec<String> = runs.iter().map(|r| r.seed.clone()).collect();
    seeds.sort_by_key(|s| (s.parse::<u64>().unwrap_or(u64::MAX), s.clone()));
    seeds.dedup();
    // (labels/class, method) -> seed -> accuracies
    let mut cells: BTreeMap<(String, String), BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for r in &runs {
        cells
            .entry((r.labels_per_class.clone(), r.method.clone()))
            .or_default()
            .entry(r.seed.clone())
            .or_default()
            .push(r.final_acc);
    }
    let mut csv = String::from("labels_per_class,method");
    for s in &seeds {
        let _ = write!(csv, ",seed_{s}");
    }
    csv.push_str(",mean\n");
    let mut text = format!("{:<8} {:<8}", "labels", "method");
    for s in &seeds {
        let _ = write!(text, " {:>9}", format!("seed {s}"));
    }
    let _ = writeln!(text, " {:>9}", "mean");
    for ((lpc, method), by_seed) in &cells {
        let _ = write!(csv, "{lpc},{method}");
        let _ = write!(text, "{lpc:<8} {method:<8}");
        let mut all = Vec::new();
        for s in &seeds {
            match by_seed.get(s) {
                Some(v) => {
                    let m = v.iter().sum::<f64>() / v.len() as f64;
                    all.extend(v);
                    let _ = write!(csv, ",{m:?}");
                    let _ = write!(text, " {m:>9.4}");
                }
                None => {
                    csv.push(',');
                    let _ = write!(text, " {:>9}", "-");
                }
            }
        }
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let _ = writeln!(csv, ",{mean:?}");
        let _ = writeln!(text, " {mean:>9.4}");
    }
    print!("{text}");
    if let Some(path) = &a.out_csv {
        write_file(path, &csv)?;
    }
    Ok(())
}

fn run(cli: Cli, matches: &ArgMatches) -> CliResult {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a, matches.subcommand_matches("train").expect("train matches")),
        Command::Eval(a) => eval_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::GateSim(a) => gate_sim(a),
        Command::Compare(a) => compare(a),
    }
}

fn main() -> ExitCode {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
