//! The four subcommands as library functions.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use pipcdr_core::clustering::read_labels;
use pipcdr_core::data::{
    gen_gaussian_mixture, load_csv, long_tail_subsample, realized_imbalance, Dataset, DatasetManifest,
};
use pipcdr_core::metrics::{imbalance_ratio, PartitionScores};
use pipcdr_core::trainer::Trainer;
use pipcdr_core::{Error, MetricsReport, Partition, Rng};

use crate::config::{ExperimentConfig, SWEEPABLE};
use crate::CliError;

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Generates the synthetic dataset described by the `data_*` keys.
pub fn generate(cfg: &ExperimentConfig) -> Result<(Dataset, DatasetManifest), Error> {
    let seed = cfg.data_seed();
    let mut rng = Rng::new(seed);
    let mut data = gen_gaussian_mixture(&cfg.data.mixture(), &mut rng)?;
    let mut realized = None;
    if let Some(ratio) = cfg.data.imbalance {
        data = long_tail_subsample(&data, ratio, &mut rng)?;
        realized = data.labels.as_ref().map(realized_imbalance);
    }
    let mut manifest = DatasetManifest::describe(&data, seed);
    manifest.realized_imbalance = realized;
    Ok((data, manifest))
}

/// Writes `features.csv`, `labels.csv` and `manifest.json` into `out_dir`.
pub fn cmd_gen_data(cfg: &ExperimentConfig, out_dir: &Path) -> Result<DatasetManifest, CliError> {
    let (data, manifest) = generate(cfg)?;
    create_dir(out_dir)?;
    data.save(out_dir)?;
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Loads `data_dir` when set, otherwise generates the synthetic data.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset, Error> {
    let Some(dir) = &cfg.data_dir else {
        return Ok(generate(cfg)?.0);
    };
    let mut data = load_csv(dir.join("features.csv"), None)?;
    let labels_path = dir.join("labels.csv");
    if labels_path.exists() {
        let file = File::open(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
        let labels = read_labels(std::io::BufReader::new(file))?;
        if labels.len() != data.len() {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: labels.len(),
            });
        }
        data.labels = Some(Partition::new(&labels));
    }
    data.name = cfg.name.clone();
    Ok(data)
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub name: String,
    pub config: serde_json::Map<String, serde_json::Value>,
    pub n: usize,
    pub d: usize,
    pub epochs_run: usize,
    pub steps: usize,
    pub kmeans_runs: usize,
    #[serde(rename = "final")]
    pub final_metrics: Option<MetricsReport>,
    pub final_cluster_sizes: Vec<usize>,
    pub wall_clock_secs: f64,
}

fn config_echo(cfg: &ExperimentConfig) -> serde_json::Map<String, serde_json::Value> {
    cfg.pairs()
        .into_iter()
        .map(|(k, v)| (k.to_string(), serde_json::Value::String(v)))
        .collect()
}

/// Trains on the configured data and writes `metrics.csv` (one row per
/// epoch, appended as epochs finish), `summary.json`, `checkpoint.json`,
/// periodic checkpoints under `checkpoints/`, and the final clusters as
/// `clusters_centroids.csv` / `clusters_assign.csv`.
pub fn cmd_train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<TrainSummary, CliError> {
    let started = Instant::now();
    cfg.train.validate()?;
    let data = load_dataset(cfg)?;
    let mut trainer = Trainer::new(&data, cfg.train.clone())?;
    create_dir(out_dir)?;
    let metrics_path = out_dir.join("metrics.csv");
    let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    let io = |e| Error::io(&metrics_path, e);
    writeln!(metrics, "{}", MetricsReport::csv_header()).map_err(io)?;
    while !trainer.is_done() {
        let report = trainer.run_epoch()?;
        writeln!(metrics, "{}", report.csv_row()).map_err(io)?;
        metrics.flush().map_err(io)?;
        let done = trainer.state().epoch;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            let dir = out_dir.join("checkpoints");
            create_dir(&dir)?;
            trainer.checkpoint().save(dir.join(format!("epoch-{done:04}.json")))?;
        }
    }
    drop(metrics);
    trainer.checkpoint().save(out_dir.join("checkpoint.json"))?;
    let outcome = trainer.finish()?;
    outcome.clusters.save_csv(
        out_dir.join("clusters_centroids.csv"),
        out_dir.join("clusters_assign.csv"),
    )?;
    let summary = TrainSummary {
        name: cfg.name.clone(),
        config: config_echo(cfg),
        n: data.len(),
        d: data.dim(),
        epochs_run: outcome.state.epoch,
        steps: outcome.state.step,
        kmeans_runs: outcome.state.kmeans_runs,
        final_metrics: outcome.history().last().copied(),
        final_cluster_sizes: outcome.clusters.counts(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    let mut text = serde_json::to_string_pretty(&summary).map_err(Error::from)?;
    text.push('\n');
    write_text(&out_dir.join("summary.json"), &text)?;
    Ok(summary)
}

/// Outcome of one sweep run.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub result: Result<TrainSummary, String>,
}

impl SweepRow {
    pub const HEADER: [&'static str; 14] = [
        "param",
        "value",
        "status",
        "epoch",
        "nmi",
        "ami",
        "ari",
        "acc",
        "imbalance_ratio",
        "std_uniformity",
        "loss_pip",
        "loss_cdr",
        "kmeans_runs",
        "error",
    ];

    fn record(&self) -> Vec<String> {
        let mut r = vec![self.param.clone(), self.value.clone()];
        match &self.result {
            Ok(s) => {
                r.push("ok".into());
                match &s.final_metrics {
                    Some(m) => {
                        // epoch column first, then the metric columns
                        let row = m.csv_row();
                        r.extend(row.split(',').map(str::to_string));
                    }
                    None => r.extend(std::iter::repeat_n(String::new(), 9)),
                }
                r.push(s.kmeans_runs.to_string());
                r.push(String::new());
            }
            Err(e) => {
                r.push("failed".into());
                r.extend(std::iter::repeat_n(String::new(), 10));
                r.push(e.clone());
            }
        }
        r
    }
}

fn canonical_param(param: &str) -> Result<&'static str, CliError> {
    SWEEPABLE
        .iter()
        .find(|(name, _)| *name == param)
        .map(|(_, key)| *key)
        .ok_or_else(|| {
            let names: Vec<&str> = SWEEPABLE.iter().map(|(n, _)| *n).collect();
            CliError::Usage(format!(
                "cannot sweep {param:?}; choose one of {}",
                names.join(", ")
            ))
        })
}

fn run_dir(out_dir: &Path, key: &str, value: &str) -> PathBuf {
    out_dir.join(format!("{key}-{value}"))
}

/// One training run per value, identical otherwise, each in its own
/// subdirectory of `out_dir`; final metrics go to `sweep.csv`. A failing run
/// is recorded and the sweep moves on. With `parallel`, runs execute on
/// separate threads; rows keep the order of `values`.
pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    param: &str,
    values: &[String],
    out_dir: &Path,
    parallel: bool,
) -> Result<Vec<SweepRow>, CliError> {
    let key = canonical_param(param)?;
    if values.is_empty() {
        return Err(CliError::Usage("--values is empty".into()));
    }
    create_dir(out_dir)?;
    let run_one = |value: &String| -> SweepRow {
        let result = (|| -> Result<TrainSummary, CliError> {
            let mut run_cfg = cfg.clone();
            run_cfg.set(key, value)?;
            run_cfg.name = format!("{}-{key}-{value}", cfg.name);
            cmd_train(&run_cfg, &run_dir(out_dir, key, value))
        })();
        SweepRow {
            param: key.to_string(),
            value: value.clone(),
            result: result.map_err(|e| e.to_string()),
        }
    };
    let rows: Vec<SweepRow> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = values.iter().map(|v| s.spawn(|| run_one(v))).collect();
            handles
                .into_iter()
                .zip(values)
                .map(|(h, v)| {
                    h.join().unwrap_or_else(|_| SweepRow {
                        param: key.to_string(),
                        value: v.clone(),
                        result: Err("run panicked".into()),
                    })
                })
                .collect()
        })
    } else {
        values.iter().map(run_one).collect()
    };
    let path = out_dir.join("sweep.csv");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = csv_writer(file);
    w.write_record(SweepRow::HEADER).map_err(Error::from)?;
    for row in &rows {
        w.write_record(row.record()).map_err(Error::from)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

fn csv_writer(file: File) -> csv::Writer<File> {
    csv::WriterBuilder::new().has_headers(false).from_writer(file)
}

/// Output of the eval command.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub nmi: f64,
    pub ami: f64,
    pub ari: f64,
    pub acc: f64,
    /// Imbalance ratio of the prediction over as many clusters as the truth has.
    pub imbalance: f64,
}

fn read_label_file(path: &Path) -> Result<Vec<usize>, Error> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_labels(std::io::BufReader::new(file))
}

/// Scores a predicted label file against a ground-truth label file.
pub fn cmd_eval(pred_csv: &Path, truth_csv: &Path) -> Result<EvalReport, CliError> {
    let pred = Partition::new(&read_label_file(pred_csv)?);
    let truth = Partition::new(&read_label_file(truth_csv)?);
    let scores = PartitionScores::compute(&truth, &pred)?;
    Ok(EvalReport {
        n: pred.len(),
        nmi: scores.nmi,
        ami: scores.ami,
        ari: scores.ari,
        acc: scores.acc,
        imbalance: imbalance_ratio(&pred, truth.k()),
    })
}
