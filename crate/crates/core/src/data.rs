//! Synthetic Gaussian-cluster datasets, labeled/unlabeled/test splits,
//! vector-space augmentations and CSV persistence.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Labeled,
    Unlabeled,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Labeled => "labeled",
            Split::Unlabeled => "unlabeled",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "labeled" => Ok(Split::Labeled),
            "unlabeled" => Ok(Split::Unlabeled),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// Feature matrix with true labels and per-row split tags.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
    pub num_classes: usize,
}

/// Labeled examples as seen by the trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPool {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

/// Unlabeled examples as seen by the trainer: features only.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledPool {
    pub features: Array2<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|&&s| s == split).count()
    }

    /// Per-class row counts within one split.
    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for i in self.indices(split) {
            counts[self.labels[i]] += 1;
        }
        counts
    }

    fn rows(&self, idx: &[usize]) -> Array2<f64> {
        self.features.select(Axis(0), idx)
    }

    pub fn labeled_pool(&self) -> LabeledPool {
        let idx = self.indices(Split::Labeled);
        LabeledPool {
            features: self.rows(&idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn unlabeled_pool(&self) -> UnlabeledPool {
        UnlabeledPool {
            features: self.rows(&self.indices(Split::Unlabeled)),
        }
    }

    /// Hidden labels of the unlabeled split, in pool order. Evaluation only.
    pub fn unlabeled_truth(&self) -> Vec<usize> {
        self.indices(Split::Unlabeled)
            .into_iter()
            .map(|i| self.labels[i])
            .collect()
    }

    pub fn test_split(&self) -> (Array2<f64>, Vec<usize>) {
        let idx = self.indices(Split::Test);
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        (self.rows(&idx), labels)
    }
}

/// Parameters of [`generate_gaussian_clusters`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub sigma: f64,
    pub separation: f64,
    pub seed: u64,
}

/// Class means at random unit directions scaled by `separation`, isotropic
/// noise of scale `sigma` around them. Rows are grouped by class; every row
/// starts out tagged `Unlabeled` until [`split`] is applied.
pub fn generate_gaussian_clusters(spec: &ClusterSpec) -> Result<Dataset> {
    if spec.num_classes < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    if spec.dim == 0 || spec.per_class == 0 {
        return Err(Error::invalid("dimension and per-class count must be positive"));
    }
    if !(spec.separation > 0.0) || !(spec.sigma >= 0.0) {
        return Err(Error::invalid("separation must be positive and sigma non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut means = Array2::<f64>::zeros((spec.num_classes, spec.dim));
    for mut row in means.rows_mut() {
        loop {
            row.map_inplace(|x| *x = StandardNormal.sample(&mut rng));
            let n = row.dot(&row).sqrt();
            if n > 1e-12 {
                row *= spec.separation / n;
                break;
            }
        }
    }
    let n = spec.num_classes * spec.per_class;
    let mut features = Array2::<f64>::zeros((n, spec.dim));
    let mut labels = Vec::with_capacity(n);
    for (r, mut row) in features.rows_mut().into_iter().enumerate() {
        let class = r / spec.per_class;
        for (x, m) in row.iter_mut().zip(means.row(class)) {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *x = m + spec.sigma * noise;
        }
        labels.push(class);
    }
    Ok(Dataset {
        features,
        labels,
        splits: vec![Split::Unlabeled; n],
        num_classes: spec.num_classes,
    })
}

/// Class means estimated from the rows of one split.
pub fn class_means(ds: &Dataset, split: Split) -> Array2<f64> {
    let mut sums = Array2::<f64>::zeros((ds.num_classes, ds.dim()));
    let mut counts = vec![0usize; ds.num_classes];
    for i in ds.indices(split) {
        let mut row = sums.row_mut(ds.labels[i]);
        row += &ds.features.row(i);
        counts[ds.labels[i]] += 1;
    }
    for (mut row, c) in sums.rows_mut().into_iter().zip(counts) {
        if c > 0 {
            row /= c as f64;
        }
    }
    sums
}

/// Test-split size per class: `round(R · test_fraction)` rows in total,
/// apportioned by largest remainder (ties to the lowest class).
pub fn apportion_test(remaining: &[usize], test_fraction: f64) -> Vec<usize> {
    let total: usize = remaining.iter().sum();
    let target = (total as f64 * test_fraction).round() as usize;
    let quotas: Vec<f64> = remaining
        .iter()
        .map(|&r| r as f64 * test_fraction)
        .collect();
    let mut out: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..remaining.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut assigned: usize = out.iter().sum();
    for &c in order.iter().cycle().take(remaining.len() * 2) {
        if assigned >= target {
            break;
        }
        if out[c] < remaining[c] {
            out[c] += 1;
            assigned += 1;
        }
    }
    out
}

/// Tags exactly `labels_per_class` rows of every class as labeled; the rest of
/// each class is divided into test and unlabeled rows per [`apportion_test`].
pub fn split(ds: &Dataset, labels_per_class: usize, test_fraction: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::invalid(format!(
            "test_fraction must lie in [0, 1], got {test_fraction}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    for (c, rows) in by_class.iter().enumerate() {
        if rows.len() < labels_per_class {
            return Err(Error::invalid(format!(
                "class {c} has {} rows, fewer than {labels_per_class} labels per class",
                rows.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for rows in by_class.iter_mut() {
        rows.shuffle(&mut rng);
    }
    let remaining: Vec<usize> = by_class.iter().map(|r| r.len() - labels_per_class).collect();
    let test = apportion_test(&remaining, test_fraction);

    let mut out = ds.clone();
    for (c, rows) in by_class.iter().enumerate() {
        for (pos, &i) in rows.iter().enumerate() {
            out.splits[i] = if pos < labels_per_class {
                Split::Labeled
            } else if pos < labels_per_class + test[c] {
                Split::Test
            } else {
                Split::Unlabeled
            };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub weak_noise_sigma: f64,
    pub strong_noise_sigma: f64,
    pub strong_dropout_prob: f64,
}

impl AugmentationPolicy {
    pub fn new(weak_noise_sigma: f64, strong_noise_sigma: f64, strong_dropout_prob: f64) -> Result<Self> {
        let p = AugmentationPolicy {
            weak_noise_sigma,
            strong_noise_sigma,
            strong_dropout_prob,
        };
        p.validate()?;
        Ok(p)
    }

    /// `weak < strong` unless both are zero (the identity policy).
    pub fn validate(&self) -> Result<()> {
        let identity = self.weak_noise_sigma == 0.0 && self.strong_noise_sigma == 0.0;
        if !(self.weak_noise_sigma >= 0.0) || !(self.strong_noise_sigma >= 0.0) {
            return Err(Error::invalid("augmentation sigmas must be non-negative"));
        }
        if !identity && self.weak_noise_sigma >= self.strong_noise_sigma {
            return Err(Error::invalid("weak noise must be smaller than strong noise"));
        }
        if !(0.0..=1.0).contains(&self.strong_dropout_prob) {
            return Err(Error::invalid("dropout probability must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentKind {
    Weak,
    Strong,
}

/// Weak: additive noise. Strong: larger additive noise, then independent coordinate dropout.
pub fn augment<R: Rng + ?Sized>(v: ArrayView1<'_, f64>, policy: &AugmentationPolicy, kind: AugmentKind, rng: &mut R) -> Array1<f64> {
    let sigma = match kind {
        AugmentKind::Weak => policy.weak_noise_sigma,
        AugmentKind::Strong => policy.strong_noise_sigma,
    };
    let noise = Normal::new(0.0, sigma).expect("validated sigma");
    let mut out = v.mapv(|x| x + noise.sample(rng));
    if kind == AugmentKind::Strong && policy.strong_dropout_prob > 0.0 {
        for x in out.iter_mut() {
            if rng.random::<f64>() < policy.strong_dropout_prob {
                *x = 0.0;
            }
        }
    }
    out
}

/// Row-wise [`augment`].
pub fn augment_rows<R: Rng + ?Sized>(rows: &Array2<f64>, policy: &AugmentationPolicy, kind: AugmentKind, rng: &mut R) -> Array2<f64> {
    let mut out = rows.clone();
    for (mut dst, src) in out.rows_mut().into_iter().zip(rows.rows()) {
        dst.assign(&augment(src, policy, kind, rng));
    }
    out
}

fn header(dim: usize) -> String {
    let mut h: Vec<String> = (0..dim).map(|i| format!("feat_{i}")).collect();
    h.push("label".into());
    h.push("split".into());
    h.join(",")
}

/// CSV text: optional `# ` comment lines, header, one row per sample.
///
/// With `hide_unlabeled`, unlabeled rows carry label `-1`.
pub fn to_csv_string(ds: &Dataset, comments: &[String], hide_unlabeled: bool) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    let _ = writeln!(out, "{}", header(ds.dim()));
    for (i, row) in ds.features.rows().into_iter().enumerate() {
        for x in row {
            // Debug formatting is the shortest representation that round-trips
            let _ = write!(out, "{x:?},");
        }
        if hide_unlabeled && ds.splits[i] == Split::Unlabeled {
            out.push_str("-1");
        } else {
            let _ = write!(out, "{}", ds.labels[i]);
        }
        let _ = writeln!(out, ",{}", ds.splits[i].as_str());
    }
    out
}

pub fn save_csv(ds: &Dataset, path: &Path, comments: &[String]) -> Result<()> {
    write_atomic(path, to_csv_string(ds, comments, false).as_bytes())
}

/// Trainer-facing export in which unlabeled rows hide their labels.
pub fn save_unlabeled_view_csv(ds: &Dataset, path: &Path, comments: &[String]) -> Result<()> {
    write_atomic(path, to_csv_string(ds, comments, true).as_bytes())
}

/// Parses CSV text. `num_classes` is one more than the largest label, or the
/// value of a `# data.classes = K` comment when that is larger.
pub fn from_csv_str(text: &str, source: &str) -> Result<Dataset> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut declared_classes = None;
    let (header_line, header_text) = loop {
        match lines.next() {
            None => return Err(perr(1, "missing header".into())),
            Some((n, l)) if l.starts_with('#') => {
                let body = l.trim_start_matches('#').trim();
                if let Some(v) = body.strip_prefix("data.classes") {
                    if let Some(v) = v.trim().strip_prefix('=') {
                        declared_classes = Some(
                            v.trim()
                                .parse::<usize>()
                                .map_err(|e| perr(n, format!("bad classes comment: {e}")))?,
                        );
                    }
                }
            }
            Some((n, l)) => break (n, l),
        }
    };
    let cols: Vec<&str> = header_text.split(',').collect();
    if cols.len() < 2 || cols[cols.len() - 2] != "label" || cols[cols.len() - 1] != "split" {
        return Err(perr(header_line, "header must end with `label,split`".into()));
    }
    let dim = cols.len() - 2;
    for (i, c) in cols[..dim].iter().enumerate() {
        if *c != format!("feat_{i}") {
            return Err(perr(header_line, format!("expected column `feat_{i}`, found `{c}`")));
        }
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut splits = Vec::new();
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != dim + 2 {
            return Err(perr(n, format!("expected {} columns, found {}", dim + 2, cells.len())));
        }
        for cell in &cells[..dim] {
            let x: f64 = cell
                .trim()
                .parse()
                .map_err(|_| perr(n, format!("non-numeric feature `{cell}`")))?;
            if !x.is_finite() {
                return Err(perr(n, format!("non-finite feature `{cell}`")));
            }
            values.push(x);
        }
        let label: usize = cells[dim]
            .trim()
            .parse()
            .map_err(|_| perr(n, format!("invalid label `{}`", cells[dim])))?;
        labels.push(label);
        splits.push(cells[dim + 1].trim().parse::<Split>().map_err(|e| perr(n, e.to_string()))?);
    }
    let rows = labels.len();
    let features = Array2::from_shape_vec((rows, dim), values).expect("row-major fill");
    let inferred = labels.iter().max().map_or(0, |m| m + 1);
    let num_classes = declared_classes.unwrap_or(inferred).max(inferred);
    Ok(Dataset {
        features,
        labels,
        splits,
        num_classes,
    })
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_csv_str(&text, &path.display().to_string())
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".into(),
    });
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
