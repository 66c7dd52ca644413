//! Flat `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Every training hyperparameter has its own key; the `data_*` keys
//! describe the synthetic generator. Unknown or repeated keys are errors.

use std::path::{Path, PathBuf};

use pipcdr_core::data::MixtureSpec;
use pipcdr_core::trainer::{FeatureSource, PositiveSampling};
use pipcdr_core::{Error, TrainConfig};

/// Synthetic-data settings.
#[derive(Clone, Debug, PartialEq)]
pub struct DataGenConfig {
    pub clusters: usize,
    pub per_cluster: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise: f64,
    /// Long-tail subsampling ratio; `None` keeps the classes balanced.
    pub imbalance: Option<f64>,
    /// Defaults to the training seed.
    pub seed: Option<u64>,
}

impl Default for DataGenConfig {
    fn default() -> Self {
        Self {
            clusters: 8,
            per_cluster: 100,
            dim: 32,
            separation: 10.0,
            noise: 0.5,
            imbalance: None,
            seed: None,
        }
    }
}

impl DataGenConfig {
    pub fn mixture(&self) -> MixtureSpec {
        MixtureSpec::balanced(self.clusters, self.per_cluster, self.dim, self.separation, self.noise)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub train: TrainConfig,
    pub data: DataGenConfig,
    /// Directory holding `features.csv` and optionally `labels.csv`. When
    /// unset, training generates data from the `data_*` keys.
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Save a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            train: TrainConfig::default(),
            data: DataGenConfig::default(),
            data_dir: None,
            out_dir: None,
            checkpoint_every: 0,
        }
    }
}

/// Names accepted by the sweep command, with their canonical key.
pub const SWEEPABLE: [(&str, &str); 7] = [
    ("r", "kmeans_every"),
    ("kmeans_every", "kmeans_every"),
    ("sigma", "sigma"),
    ("w", "w"),
    ("K", "k"),
    ("k", "k"),
    ("queue_capacity", "queue_capacity"),
];

fn invalid(msg: String) -> Error {
    Error::ConfigInvalid(msg)
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, Error> {
    value
        .parse()
        .map_err(|_| invalid(format!("{key}: cannot parse {value:?}")))
}

fn boolean(key: &str, value: &str) -> Result<bool, Error> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(invalid(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn list(key: &str, value: &str) -> Result<Vec<usize>, Error> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, Error> {
        let mut cfg = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                invalid(format!("line {}: expected key = value, got {line:?}", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(invalid(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| invalid(format!("line {}: {}", lineno + 1, strip(e))))?;
            seen.push(key.to_string());
        }
        for p in [&mut cfg.data_dir, &mut cfg.out_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Sets one key. Path values are taken as given.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        let t = &mut self.train;
        match key {
            "name" => self.name = value.to_string(),
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,

            "tau" => t.tau = num(key, value)?,
            "sigma" => t.sigma = num(key, value)?,
            "w" => t.w = num(key, value)?,
            "momentum" => t.momentum = num(key, value)?,
            "kmeans_every" | "r" => t.kmeans_every = num(key, value)?,
            "k" | "K" => t.k = num(key, value)?,
            "warmup_epochs" => t.warmup_epochs = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "lr_base" => t.lr_base = num(key, value)?,
            "predictor_lr_mult" => t.predictor_lr_mult = num(key, value)?,
            "sgd_momentum" => t.sgd_momentum = num(key, value)?,
            "weight_decay" => t.weight_decay = num(key, value)?,
            "queue_capacity" => t.queue_capacity = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            "feature_source" => {
                t.feature_source = match value {
                    "encoder" => FeatureSource::Encoder,
                    "projector" => FeatureSource::Projector,
                    _ => return Err(invalid(format!("{key}: expected encoder or projector, got {value:?}"))),
                }
            }
            "positive_sampling" => {
                t.positive_sampling = match value {
                    "pip" => PositiveSampling::Pip,
                    "psa" => PositiveSampling::Psa,
                    _ => return Err(invalid(format!("{key}: expected pip or psa, got {value:?}"))),
                }
            }
            "use_predictor" => t.use_predictor = boolean(key, value)?,
            "backbone_hidden" => t.backbone_hidden = list(key, value)?,
            "feature_dim" => t.feature_dim = num(key, value)?,
            "projector_hidden" => t.projector_hidden = num(key, value)?,
            "projection_dim" => t.projection_dim = num(key, value)?,
            "predictor_hidden" => t.predictor_hidden = num(key, value)?,
            "batch_norm" => t.batch_norm = boolean(key, value)?,
            "augment_noise_std" => t.augment.noise_std = num(key, value)?,
            "augment_mask_prob" => t.augment.mask_prob = num(key, value)?,
            "augment_scale_jitter" => t.augment.scale_jitter = num(key, value)?,
            "kmeans_n_init" => t.kmeans_n_init = num(key, value)?,
            "kmeans_max_iter" => t.kmeans_max_iter = num(key, value)?,

            "data_clusters" => self.data.clusters = num(key, value)?,
            "data_per_cluster" => self.data.per_cluster = num(key, value)?,
            "data_dim" => self.data.dim = num(key, value)?,
            "data_separation" => self.data.separation = num(key, value)?,
            "data_noise" => self.data.noise = num(key, value)?,
            "data_imbalance" => self.data.imbalance = Some(num(key, value)?),
            "data_seed" => self.data.seed = Some(num(key, value)?),
            _ => return Err(invalid(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.train.seed)
    }

    /// Every setting as `(key, value)` in a fixed order; parsing the output
    /// of [`ExperimentConfig::to_text`] gives back the same config.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let mut v = vec![
            ("name", self.name.clone()),
            ("tau", t.tau.to_string()),
            ("sigma", t.sigma.to_string()),
            ("w", t.w.to_string()),
            ("momentum", t.momentum.to_string()),
            ("kmeans_every", t.kmeans_every.to_string()),
            ("k", t.k.to_string()),
            ("warmup_epochs", t.warmup_epochs.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr_base", t.lr_base.to_string()),
            ("predictor_lr_mult", t.predictor_lr_mult.to_string()),
            ("sgd_momentum", t.sgd_momentum.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("queue_capacity", t.queue_capacity.to_string()),
            ("seed", t.seed.to_string()),
            (
                "feature_source",
                match t.feature_source {
                    FeatureSource::Encoder => "encoder",
                    FeatureSource::Projector => "projector",
                }
                .into(),
            ),
            (
                "positive_sampling",
                match t.positive_sampling {
                    PositiveSampling::Pip => "pip",
                    PositiveSampling::Psa => "psa",
                }
                .into(),
            ),
            ("use_predictor", t.use_predictor.to_string()),
            ("backbone_hidden", join(&t.backbone_hidden)),
            ("feature_dim", t.feature_dim.to_string()),
            ("projector_hidden", t.projector_hidden.to_string()),
            ("projection_dim", t.projection_dim.to_string()),
            ("predictor_hidden", t.predictor_hidden.to_string()),
            ("batch_norm", t.batch_norm.to_string()),
            ("augment_noise_std", t.augment.noise_std.to_string()),
            ("augment_mask_prob", t.augment.mask_prob.to_string()),
            ("augment_scale_jitter", t.augment.scale_jitter.to_string()),
            ("kmeans_n_init", t.kmeans_n_init.to_string()),
            ("kmeans_max_iter", t.kmeans_max_iter.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("data_clusters", self.data.clusters.to_string()),
            ("data_per_cluster", self.data.per_cluster.to_string()),
            ("data_dim", self.data.dim.to_string()),
            ("data_separation", self.data.separation.to_string()),
            ("data_noise", self.data.noise.to_string()),
        ];
        if let Some(i) = self.data.imbalance {
            v.push(("data_imbalance", i.to_string()));
        }
        if let Some(s) = self.data.seed {
            v.push(("data_seed", s.to_string()));
        }
        if let Some(d) = &self.data_dir {
            v.push(("data_dir", d.display().to_string()));
        }
        if let Some(d) = &self.out_dir {
            v.push(("out_dir", d.display().to_string()));
        }
        v
    }

    pub fn to_text(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::ConfigInvalid(m) => m,
        other => other.to_string(),
    }
}
