//! Subcommands driven through the library entry points and the binary.

use std::path::{Path, PathBuf};
use std::process::Command;

use pipcdr_cli::{cmd_eval, cmd_gen_data, cmd_sweep, cmd_train, main_with_args, CliError, ExperimentConfig};

const SMALL: &str = "\
# tiny run
name = small
data_clusters = 3
data_per_cluster = 15
data_dim = 6
data_seed = 11
k = 3
epochs = 3
warmup_epochs = 1
batch_size = 16
backbone_hidden = 12
feature_dim = 6
projector_hidden = 12
projection_dim = 4
predictor_hidden = 8
kmeans_n_init = 2
";

/// The small config with `key = value` overrides applied.
fn small(overrides: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse(SMALL, Path::new(".")).unwrap();
    for line in overrides.lines() {
        let (k, v) = line.split_once('=').unwrap();
        cfg.set(k.trim(), v.trim()).unwrap();
    }
    cfg
}

fn write_text(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.conf");
    std::fs::write(&path, text).unwrap();
    path
}

fn write_config(dir: &Path, overrides: &str) -> PathBuf {
    write_text(dir, &small(overrides).to_text())
}

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("pipcdr").chain(args.iter().copied()))
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn gen_data_is_deterministic_and_creates_out_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("");
    let (a, b) = (tmp.path().join("a/nested"), tmp.path().join("b"));
    cmd_gen_data(&cfg, &a).unwrap();
    cmd_gen_data(&cfg, &b).unwrap();
    for file in ["features.csv", "labels.csv", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
    assert_eq!(read(a.join("labels.csv")).lines().count(), 45);
}

#[test]
fn gen_data_records_realized_imbalance() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("data_imbalance = 0.2");
    let manifest = cmd_gen_data(&cfg, tmp.path()).unwrap();
    assert_eq!(manifest.realized_imbalance, Some(3.0 / 15.0));
    let json: serde_json::Value = serde_json::from_str(&read(tmp.path().join("manifest.json"))).unwrap();
    assert_eq!(json["realized_imbalance"], 0.2);
}

#[test]
fn train_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = cmd_train(&small("checkpoint_every = 2"), tmp.path()).unwrap();
    let metrics = read(tmp.path().join("metrics.csv"));
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,nmi,ami,ari,acc,imbalance_ratio,std_uniformity,loss_pip,loss_cdr"
    );
    assert_eq!(lines.count(), 3);
    for file in ["summary.json", "checkpoint.json", "checkpoints/epoch-0002.json", "clusters_centroids.csv", "clusters_assign.csv"] {
        assert!(tmp.path().join(file).exists(), "{file}");
    }
    assert_eq!(read(tmp.path().join("clusters_assign.csv")).lines().count(), 45);
    let json: serde_json::Value = serde_json::from_str(&read(tmp.path().join("summary.json"))).unwrap();
    assert_eq!(json["config"]["k"], "3");
    assert_eq!(json["final"]["epoch"], 2);
    assert_eq!(json["kmeans_runs"], 2);
    assert!(json["wall_clock_secs"].as_f64().unwrap() >= 0.0);
    assert_eq!(summary.epochs_run, 3);
}

#[test]
fn single_epoch_gives_single_row() {
    let tmp = tempfile::tempdir().unwrap();
    cmd_train(&small("epochs = 1"), tmp.path()).unwrap();
    assert_eq!(read(tmp.path().join("metrics.csv")).lines().count(), 2);
}

#[test]
fn training_from_generated_files_matches_inline_generation() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    cmd_gen_data(&small(""), &data).unwrap();
    let from_files = small(&format!("data_dir = {}\n", data.display()));
    cmd_train(&from_files, &tmp.path().join("files")).unwrap();
    cmd_train(&small(""), &tmp.path().join("inline")).unwrap();
    assert_eq!(read(tmp.path().join("files/metrics.csv")), read(tmp.path().join("inline/metrics.csv")));
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();
    let cfg = write_config(tmp.path(), "k = 1");
    assert_eq!(run(&["train", "--config", cfg.to_str().unwrap(), "--out", out]), 2);
    for extra in ["colour = red\n", "k = 3\n", "tau = many\n", "no equals sign\n"] {
        let cfg = write_text(tmp.path(), &format!("{SMALL}{extra}"));
        assert_eq!(run(&["train", "--config", cfg.to_str().unwrap(), "--out", out]), 2, "{extra:?}");
    }
    assert_eq!(run(&["train", "--out", out]), 2);
    assert_eq!(run(&["bogus"]), 2);
    let cfg = write_config(tmp.path(), "");
    assert_eq!(run(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out, "--param", "tau", "--values", "0.1"]), 2);
}

#[test]
fn missing_config_file_is_a_runtime_error() {
    assert_eq!(run(&["train", "--config", "/nonexistent/run.conf", "--out", "/tmp/unused"]), 1);
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "seed = 5");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&["train", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap(), "--seed", "9"]), 0);
    cmd_train(&small("seed = 9"), &b).unwrap();
    assert_eq!(read(a.join("metrics.csv")), read(b.join("metrics.csv")));
}

#[test]
fn sweep_over_sigma_values_gives_one_row_each() {
    let tmp = tempfile::tempdir().unwrap();
    let values: Vec<String> = ["0", "0.0001", "0.001", "0.005", "0.01", "0.05"].map(String::from).to_vec();
    let rows = cmd_sweep(&small("epochs = 2"), "sigma", &values, tmp.path(), false).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.result.is_ok()));
    let csv = read(tmp.path().join("sweep.csv"));
    assert_eq!(csv.lines().count(), 7);
    assert!(tmp.path().join("sigma-0.005/metrics.csv").exists());
}

#[test]
fn kmeans_runs_drop_as_interval_grows() {
    let tmp = tempfile::tempdir().unwrap();
    let values: Vec<String> = ["1", "2", "4", "8", "16"].map(String::from).to_vec();
    let rows = cmd_sweep(&small("epochs = 9"), "r", &values, tmp.path(), true).unwrap();
    let runs: Vec<usize> = rows.iter().map(|r| r.result.as_ref().unwrap().kmeans_runs).collect();
    assert_eq!(runs, vec![8, 4, 2, 1, 1]);
}

#[test]
fn cluster_count_sweep_fills_nmi() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("data_clusters = 10\ndata_per_cluster = 6\nepochs = 2");
    let values: Vec<String> = ["5", "10", "20"].map(String::from).to_vec();
    let rows = cmd_sweep(&cfg, "K", &values, tmp.path(), false).unwrap();
    for row in rows {
        let nmi = row.result.unwrap().final_metrics.unwrap().nmi;
        assert!(nmi.is_finite() && nmi > 0.0);
    }
}

#[test]
fn failed_sweep_runs_are_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let values: Vec<String> = ["0.5", "2"].map(String::from).to_vec();
    let rows = cmd_sweep(&small("epochs = 1"), "w", &values, tmp.path(), false).unwrap();
    assert!(rows[0].result.is_ok());
    assert!(rows[1].result.is_err());
    let csv = read(tmp.path().join("sweep.csv"));
    let last = csv.lines().last().unwrap();
    assert!(last.starts_with("w,2,failed,"), "{last}");

    let cfg = write_config(tmp.path(), "epochs = 1");
    let out = tmp.path().join("all-bad");
    let code = run(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--param", "w", "--values", "2,3"]);
    assert_eq!(code, 1);
}

#[test]
fn one_value_sweep_equals_a_train_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("");
    let rows = cmd_sweep(&cfg, "sigma", &["0.001".to_string()], &tmp.path().join("sweep"), false).unwrap();
    let single = cmd_train(&small("sigma = 0.001"), &tmp.path().join("train")).unwrap();
    assert_eq!(rows[0].result.as_ref().unwrap().final_metrics, single.final_metrics);
}

#[test]
fn parallel_sweep_matches_sequential() {
    let tmp = tempfile::tempdir().unwrap();
    let values: Vec<String> = ["0.5", "0.9"].map(String::from).to_vec();
    cmd_sweep(&small(""), "w", &values, &tmp.path().join("seq"), false).unwrap();
    cmd_sweep(&small(""), "w", &values, &tmp.path().join("par"), true).unwrap();
    assert_eq!(read(tmp.path().join("seq/sweep.csv")), read(tmp.path().join("par/sweep.csv")));
}

#[test]
fn eval_scores_label_files() {
    let tmp = tempfile::tempdir().unwrap();
    let write = |name: &str, labels: &[usize]| {
        let path = tmp.path().join(name);
        let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
        std::fs::write(&path, text).unwrap();
        path
    };
    let truth = write("truth.csv", &[0, 0, 1, 1, 2, 2]);
    let same = write("same.csv", &[5, 5, 3, 3, 1, 1]);
    let report = cmd_eval(&same, &truth).unwrap();
    assert_eq!((report.nmi, report.ari, report.acc, report.imbalance), (1.0, 1.0, 1.0, 1.0));
    assert!((report.ami - 1.0).abs() < 1e-10);

    // one point moved: accuracy 5/6, pair-counting ARI by hand
    let off = write("off.csv", &[0, 0, 1, 1, 2, 1]);
    let report = cmd_eval(&off, &truth).unwrap();
    assert!((report.acc - 5.0 / 6.0).abs() < 1e-12);
    // pairs: index 2, sa 3, sb 4, total 15
    let expected = (2.0 - 12.0 / 15.0) / (3.5 - 12.0 / 15.0);
    assert!((report.ari - expected).abs() < 1e-12);
    assert!((report.imbalance - 1.0 / 3.0).abs() < 1e-12);

    let short = write("short.csv", &[0, 1]);
    assert!(matches!(cmd_eval(&short, &truth), Err(CliError::Core(pipcdr_core::Error::LengthMismatch { .. }))));
    assert_eq!(run(&["eval", short.to_str().unwrap(), truth.to_str().unwrap()]), 2);
    let junk = write("junk.csv", &[]);
    std::fs::write(&junk, "0\nx").unwrap();
    assert_eq!(run(&["eval", junk.to_str().unwrap(), truth.to_str().unwrap()]), 2);
}

#[test]
fn binary_uses_env_out_dir_as_fallback() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "epochs = 1");
    let env_out = tmp.path().join("from-env");
    let status = Command::new(env!("CARGO_BIN_EXE_pipcdr"))
        .args(["gen-data", "--config", cfg.to_str().unwrap()])
        .env("PIPCDR_OUT_DIR", &env_out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(env_out.join("features.csv").exists());

    let flag_out = tmp.path().join("from-flag");
    let status = Command::new(env!("CARGO_BIN_EXE_pipcdr"))
        .args(["gen-data", "--config", cfg.to_str().unwrap(), "--out", flag_out.to_str().unwrap()])
        .env("PIPCDR_OUT_DIR", tmp.path().join("unused"))
        .status()
        .unwrap();
    assert!(status.success());
    assert!(flag_out.join("manifest.json").exists());
    assert!(!tmp.path().join("unused").exists());

    let status = Command::new(env!("CARGO_BIN_EXE_pipcdr"))
        .args(["gen-data", "--config", cfg.to_str().unwrap()])
        .env_remove("PIPCDR_OUT_DIR")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}
