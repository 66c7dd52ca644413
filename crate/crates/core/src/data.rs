//! Synthetic datasets, vector augmentations and CSV loading.
//!
//! Image augmentations have no meaning for plain feature vectors, so view
//! pairs come from a multiplicative scale jitter, additive Gaussian noise
//! and random coordinate masking instead.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::write_labels;
use crate::error::{Error, Result};
use crate::metrics::Partition;
use crate::numerics::{dot, Matrix, Rng};

/// Feature matrix with optional ground-truth labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Matrix,
    pub labels: Option<Partition>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Matrix, labels: Option<Partition>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::LengthMismatch {
                    left: features.rows(),
                    right: l.len(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows `idx` in the given order; labels are re-canonicalized.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: self.features.select_rows(idx),
            labels: self
                .labels
                .as_ref()
                .map(|l| Partition::new(&idx.iter().map(|&i| l.labels()[i]).collect::<Vec<_>>())),
        }
    }

    /// Writes `features.csv` and, when labels exist, `labels.csv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.features.save_csv(dir.join("features.csv"))?;
        if let Some(l) = &self.labels {
            let path = dir.join("labels.csv");
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_labels(l.labels(), std::io::BufWriter::new(file))?;
        }
        Ok(())
    }
}

/// Summary written next to generated data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub seed: u64,
    /// Smallest over largest class size, present for long-tail data.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub realized_imbalance: Option<f64>,
}

impl DatasetManifest {
    pub fn describe(data: &Dataset, seed: u64) -> Self {
        Self {
            name: data.name.clone(),
            n: data.len(),
            d: data.dim(),
            k: data.labels.as_ref().map_or(0, Partition::k),
            seed,
            realized_imbalance: None,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Parameters of [`gen_gaussian_mixture`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub per_cluster: Vec<usize>,
    pub ambient_dim: usize,
    /// Minimum pairwise distance between cluster means.
    pub separation: f64,
    /// Standard deviation of the isotropic within-cluster noise.
    pub noise: f64,
}

impl MixtureSpec {
    pub fn balanced(k: usize, per_cluster: usize, ambient_dim: usize, separation: f64, noise: f64) -> Self {
        Self {
            per_cluster: vec![per_cluster; k],
            ambient_dim,
            separation,
            noise,
        }
    }

    pub fn k(&self) -> usize {
        self.per_cluster.len()
    }
}

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

fn place_means(k: usize, dim: usize, separation: f64, rng: &mut Rng) -> Result<Matrix> {
    // typical distance between two draws is 1.5·separation
    let spread = 1.5 * separation / (2.0 * dim as f64).sqrt();
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut attempts = 0;
    while means.len() < k {
        if attempts == MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::InfeasibleSeparation { k, separation });
        }
        attempts += 1;
        let cand: Vec<f64> = (0..dim).map(|_| spread * rng.normal()).collect();
        let ok = means.iter().all(|m| {
            let d2: f64 = m.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
            d2 >= separation * separation
        });
        if ok {
            means.push(cand);
        }
    }
    Matrix::from_rows(&means)
}

/// Fixed random two-layer map `y = W₂·tanh(W₁·x / s)` applied row-wise, with
/// `s` the typical norm of a cluster mean so the squashing stays in its
/// curved range.
struct RandomWarp {
    w1: Matrix,
    w2: Matrix,
    input_scale: f64,
}

impl RandomWarp {
    fn new(dim: usize, separation: f64, rng: &mut Rng) -> Self {
        let hidden = 2 * dim.max(4);
        let w1 = Matrix::from_fn(hidden, dim, |_, _| rng.normal());
        let out_std = 1.0 / (hidden as f64).sqrt();
        let w2 = Matrix::from_fn(dim, hidden, |_, _| out_std * rng.normal());
        Self {
            w1,
            w2,
            input_scale: (1.5 * separation / 2f64.sqrt()).max(f64::MIN_POSITIVE),
        }
    }

    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.matmul_t(&self.w1)?.scaled(1.0 / self.input_scale);
        h.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
        h.matmul_t(&self.w2)
    }
}

/// Separable Gaussian clusters pushed through a fixed random nonlinearity.
///
/// Means are drawn with rejection until every pair is at least
/// `separation` apart, points are `mean + noise·ε`, and the whole cloud
/// then goes through a seeded two-layer tanh map of the same width.
pub fn gen_gaussian_mixture(spec: &MixtureSpec, rng: &mut Rng) -> Result<Dataset> {
    let k = spec.k();
    if k == 0 {
        return Err(Error::InvalidArgument("mixture needs at least one cluster".into()));
    }
    if spec.per_cluster.contains(&0) {
        return Err(Error::InvalidArgument("cluster sizes must be positive".into()));
    }
    if !(spec.separation > 0.0) || !(spec.noise >= 0.0) || spec.ambient_dim == 0 {
        return Err(Error::InvalidArgument(
            "separation must be positive, noise non-negative, dimension non-zero".into(),
        ));
    }
    let d = spec.ambient_dim;
    let means = place_means(k, d, spec.separation, rng)?;
    let warp = RandomWarp::new(d, spec.separation, rng);
    let n: usize = spec.per_cluster.iter().sum();
    let mut raw = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (c, &count) in spec.per_cluster.iter().enumerate() {
        for _ in 0..count {
            for (v, &m) in raw.row_mut(row).iter_mut().zip(means.row(c)) {
                *v = m + spec.noise * rng.normal();
            }
            labels.push(c);
            row += 1;
        }
    }
    let features = warp.apply(&raw)?;
    Dataset::new(
        format!("gaussian-mixture-k{k}-d{d}"),
        features,
        Some(Partition::new(&labels)),
    )
}

/// Keep counts `round(N_max·imbalance^{k/(K−1)})` per class (at least 1,
/// at most the class size), geometric from the first class to the last.
pub fn long_tail_counts(class_sizes: &[usize], imbalance: f64) -> Vec<usize> {
    let k = class_sizes.len();
    let n_max = class_sizes.iter().copied().max().unwrap_or(0) as f64;
    class_sizes
        .iter()
        .enumerate()
        .map(|(c, &size)| {
            let frac = if k > 1 { c as f64 / (k - 1) as f64 } else { 0.0 };
            let target = (n_max * imbalance.powf(frac)).round() as usize;
            target.clamp(1, size.max(1)).min(size)
        })
        .collect()
}

/// Random per-class subsample with an exponential class-size profile. Row
/// order of the kept points is preserved.
pub fn long_tail_subsample(data: &Dataset, imbalance: f64, rng: &mut Rng) -> Result<Dataset> {
    if !(imbalance > 0.0 && imbalance <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "imbalance must lie in (0, 1], got {imbalance}"
        )));
    }
    let labels = data.labels.as_ref().ok_or(Error::LabelsMissing)?;
    let keep = long_tail_counts(&labels.counts(), imbalance);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); labels.k()];
    for (i, &l) in labels.labels().iter().enumerate() {
        members[l].push(i);
    }
    let mut kept = Vec::new();
    for (m, &count) in members.iter_mut().zip(&keep) {
        rng.shuffle(m);
        kept.extend_from_slice(&m[..count]);
    }
    kept.sort_unstable();
    let mut out = data.subset(&kept);
    out.name = format!("{}-longtail", data.name);
    Ok(out)
}

/// Smallest over largest class size.
pub fn realized_imbalance(labels: &Partition) -> f64 {
    let counts = labels.counts();
    let max = counts.iter().copied().max().unwrap_or(0);
    let min = counts.iter().copied().min().unwrap_or(0);
    if max == 0 {
        0.0
    } else {
        min as f64 / max as f64
    }
}

/// Random view transformation of a feature vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub noise_std: f64,
    /// Probability of zeroing each coordinate.
    pub mask_prob: f64,
    /// Half-width of the uniform scale jitter.
    pub scale_jitter: f64,
}

impl AugmentSpec {
    pub fn none() -> Self {
        Self {
            noise_std: 0.0,
            mask_prob: 0.0,
            scale_jitter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.noise_std >= 0.0
            && self.noise_std.is_finite()
            && (0.0..=1.0).contains(&self.mask_prob)
            && self.scale_jitter >= 0.0
            && self.scale_jitter.is_finite();
        if !ok {
            return Err(Error::ConfigInvalid(format!("invalid augmentation {self:?}")));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.noise_std == 0.0 && self.mask_prob == 0.0 && self.scale_jitter == 0.0
    }
}

/// `x′ = (1 + jitter)·x + noise`, then each coordinate is zeroed with
/// probability `mask_prob`. Disabled components draw no randomness.
pub fn augment(x: &[f64], spec: &AugmentSpec, rng: &mut Rng) -> Vec<f64> {
    let scale = if spec.scale_jitter > 0.0 {
        1.0 + rng.uniform_range(-spec.scale_jitter, spec.scale_jitter)
    } else {
        1.0
    };
    x.iter()
        .map(|&v| {
            let mut out = scale * v;
            if spec.noise_std > 0.0 {
                out += spec.noise_std * rng.normal();
            }
            if spec.mask_prob > 0.0 && rng.bernoulli(spec.mask_prob) {
                out = 0.0;
            }
            out
        })
        .collect()
}

pub fn augment_batch(x: &Matrix, spec: &AugmentSpec, rng: &mut Rng) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for (r, row) in x.row_iter().enumerate() {
        out.row_mut(r).copy_from_slice(&augment(row, spec, rng));
    }
    out
}

fn parse_cell(text: &str, row: usize, column: usize) -> Result<f64> {
    let t = text.trim();
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(Error::Parse {
            row,
            column,
            message: format!("non-finite value {t:?}"),
        }),
        Err(_) => Err(Error::Parse {
            row,
            column,
            message: format!("not a number: {t:?}"),
        }),
    }
}

/// Parses a headerless numeric CSV. `label_column` (0-based) is split off as
/// non-negative integer labels. Error locations are 1-based line and column
/// numbers of the file.
pub fn parse_csv_table<R: Read>(reader: R, label_column: Option<usize>) -> Result<(Matrix, Option<Vec<usize>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut width = None;
    let mut data = Vec::new();
    let mut labels = label_column.map(|_| Vec::new());
    let mut rows = 0;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedRows {
                row: line,
                expected,
                got: record.len(),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            if Some(c) == label_column {
                let v = parse_cell(cell, line, c + 1)?;
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Parse {
                        row: line,
                        column: c + 1,
                        message: format!("label must be a non-negative integer, got {}", cell.trim()),
                    });
                }
                labels.as_mut().expect("label column set").push(v as usize);
            } else {
                data.push(parse_cell(cell, line, c + 1)?);
            }
        }
        rows += 1;
    }
    let width = width.unwrap_or(0);
    if let Some(lc) = label_column {
        if rows > 0 && lc >= width {
            return Err(Error::InvalidArgument(format!(
                "label column {lc} out of range for {width} columns"
            )));
        }
    }
    let cols = if rows == 0 { 0 } else { width - usize::from(label_column.is_some()) };
    Ok((Matrix::new(rows, cols, data)?, labels))
}

/// Loads a feature CSV, optionally taking labels from column `label_column`
/// (0-based).
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let (features, labels) = parse_csv_table(std::io::BufReader::new(file), label_column)?;
    let name = path
        .file_stem()
        .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, features, labels.map(|l| Partition::new(&l)))
}

/// Mean cosine between rows of `a` and `b`, row by row.
pub fn mean_row_cosine(a: &Matrix, b: &Matrix) -> f64 {
    let n = a.rows().min(b.rows());
    if n == 0 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (x, y) = (a.row(i), b.row(i));
        let denom = (dot(x, x) * dot(y, y)).sqrt();
        if denom > 0.0 {
            s += dot(x, y) / denom;
        }
    }
    s / n as f64
}
