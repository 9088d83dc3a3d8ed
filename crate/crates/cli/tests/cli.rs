use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qbnet::checkpoint::Checkpoint;
use qbnet::ecr::{build_ecr_report, ecr_csv, fit_curves, ParamModel};
use qbnet::nn::evaluate;
use qbnet::quant::direct_quantize;
use qbnet::sweep::{write_records, Method, ModelConfig, Precision, RunRecord};

fn qbnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qbnet"))
        .args(args)
        .current_dir(dir)
        .env_remove("QBNET_DATA_DIR")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr_lines(out: &Output) -> usize {
    String::from_utf8_lossy(&out.stderr).lines().count()
}

const MODEL: &str = r#"
family = "fcdnn"
size = "16"
seed = 4

[data]
source = "idx"
dir = "synth"
train_count = 150
valid_count = 50
split_seed = 2

[train]
learning_rate = 1.0
batch_size = 16
max_epochs = 4
early_stop_patience = 2
lr_decay = 0.5
"#;

/// Writes a synthetic dataset and a model config into `dir`.
fn setup(dir: &Path) {
    let out = qbnet(
        dir,
        &[
            "synth", "--out-dir", "synth", "--samples", "200", "--test-samples", "60",
            "--features", "12", "--classes", "4", "--seed", "9",
        ],
    );
    ok(&out);
    fs::write(dir.join("model.toml"), MODEL).unwrap();
}

/// The model config with its data directory made absolute.
fn library_config(dir: &Path) -> ModelConfig {
    let abs = format!("dir = {:?}", dir.join("synth"));
    ModelConfig::from_toml(&MODEL.replace("dir = \"synth\"", &abs)).unwrap()
}

#[test]
fn help_succeeds_and_bad_usage_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    ok(&qbnet(dir.path(), &["--help"]));
    let out = qbnet(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_lines(&out), 1);
    let out = qbnet(dir.path(), &["quantize", "--bits", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_then_eval_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    ok(&qbnet(dir, &["train", "--config", "model.toml", "-o", "float.qbnet"]));
    let printed = ok(&qbnet(
        dir,
        &["eval", "--checkpoint", "float.qbnet", "--config", "model.toml", "--split", "train"],
    ));
    let value: f64 = printed.trim().parse().unwrap();
    assert!((0.0..=1.0).contains(&value));

    let cfg = library_config(dir);
    let splits = cfg.data.load(dir).unwrap();
    let ckpt = Checkpoint::load(&dir.join("float.qbnet")).unwrap();
    assert_eq!(value, evaluate(ckpt.network(), &splits.train).unwrap());
}

#[test]
fn direct_quantization_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    ok(&qbnet(dir, &["train", "--config", "model.toml", "-o", "float.qbnet"]));
    ok(&qbnet(
        dir,
        &["quantize", "--checkpoint", "float.qbnet", "--bits", "2", "--method", "direct", "-o", "q2.qbnet"],
    ));
    let printed = ok(&qbnet(dir, &["eval", "--checkpoint", "q2.qbnet", "--config", "model.toml"]));

    let cfg = library_config(dir);
    let splits = cfg.data.load(dir).unwrap();
    let float = Checkpoint::load(&dir.join("float.qbnet")).unwrap();
    let (q, _) = direct_quantize(float.network(), 2).unwrap();
    let saved = Checkpoint::load(&dir.join("q2.qbnet")).unwrap();
    assert_eq!(saved.network(), &q);
    assert_eq!(printed.trim().parse::<f64>().unwrap(), evaluate(&q, &splits.test).unwrap());
}

#[test]
fn retrain_quantization_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    ok(&qbnet(dir, &["train", "--config", "model.toml", "-o", "float.qbnet"]));
    let out = qbnet(
        dir,
        &["quantize", "--checkpoint", "float.qbnet", "--bits", "3", "--method", "retrain", "-o", "q.qbnet"],
    );
    assert_eq!(out.status.code(), Some(1), "retrain without --config is a usage error");
    ok(&qbnet(
        dir,
        &[
            "quantize", "--checkpoint", "float.qbnet", "--bits", "3", "--method", "retrain",
            "--config", "model.toml", "-o", "q.qbnet",
        ],
    ));
    match Checkpoint::load(&dir.join("q.qbnet")).unwrap() {
        Checkpoint::Quantized(m) => assert_eq!(m.spec.bits(), 3),
        Checkpoint::Float(_) => panic!("expected a quantized checkpoint"),
    }
}

#[test]
fn unknown_config_keys_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    fs::write(dir.join("bad.toml"), MODEL.replace("seed = 4", "seed = 4\nmomentum = 0.9")).unwrap();
    let out = qbnet(dir, &["train", "--config", "bad.toml", "-o", "x.qbnet"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_lines(&out), 1);
}

#[test]
fn data_and_format_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("model.toml"), MODEL).unwrap();
    let out = qbnet(dir, &["train", "--config", "model.toml", "-o", "x.qbnet"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_lines(&out), 1);

    fs::write(dir.join("junk.qbnet"), b"not a checkpoint").unwrap();
    let out = qbnet(dir, &["eval", "--checkpoint", "junk.qbnet", "--config", "model.toml"]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(dir.join("r.csv"), "config_hash,oops\n").unwrap();
    let out = qbnet(dir, &["ecr", "--results", "r.csv", "--out-dir", "e"]);
    assert_eq!(out.status.code(), Some(2));
}

fn analytic_records() -> Vec<RunRecord> {
    let err = |n: f64, b: i32| 0.1 + 8.0 / (n * (1.0 - 2f64.powi(-b)));
    let mut sizes: Vec<u64> = (0..=48).map(|k| (32.0 * 2f64.powf(k as f64 / 8.0)).round() as u64).collect();
    sizes.dedup();
    let mut out = Vec::new();
    for (p, m, b) in [
        (Precision::Float32, Method::Float, 32),
        (Precision::Bits(2), Method::Retrain, 2),
        (Precision::Bits(4), Method::Retrain, 4),
    ] {
        for &n in &sizes {
            out.push(RunRecord {
                config_hash: out.len() as u64,
                family: qbnet::nn::Family::Fcdnn,
                size_label: n.to_string(),
                size_param_count: 3 * n * n + 798 * n + 10,
                bits: p,
                method: m,
                seed: 0,
                valid_error: err(n as f64, b),
                test_error: err(n as f64, b),
                wall_seconds: 0.0,
            });
        }
    }
    out
}

#[test]
fn ecr_reproduces_library_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let records = analytic_records();
    write_records(&records, &dir.join("r.csv")).unwrap();
    ok(&qbnet(
        dir,
        &["ecr", "--results", "r.csv", "--out-dir", "out", "--reference-sizes", "64,128,256"],
    ));
    let stored = qbnet::sweep::read_records(&dir.join("r.csv")).unwrap();
    let curves = fit_curves(&stored, Method::Retrain).unwrap();
    let reports = build_ecr_report(&curves, &[64.0, 128.0, 256.0], &ParamModel::SquareApprox).unwrap();
    assert_eq!(fs::read_to_string(dir.join("out/ecr.csv")).unwrap(), ecr_csv(&reports));
    for f in ["size_sweep.tsv", "curves.tsv", "ecr_curves.tsv"] {
        assert!(dir.join("out").join(f).exists(), "{f} missing");
    }
    // N1 = N (1 - 2^-32) / (1 - 2^-2) for the 2-bit curve.
    let row = &reports[2].entries[0];
    let n1 = 256.0 * (1.0 - 2f64.powi(-32)) / 0.75;
    assert!((row.equivalent_size - n1).abs() < 0.01 * n1);

    ok(&qbnet(dir, &["ecr", "--results", "r.csv", "--out-dir", "exact", "--param-model", "exact"]));
    let text = fs::read_to_string(dir.join("exact/ecr_curves.tsv")).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with("\texact")));
}

#[test]
fn sweep_resumes_after_cell_limit() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    let sweep = r#"
family = "fcdnn"
sizes = ["8", "16"]
bit_widths = [2]
methods = ["float", "direct", "retrain"]
seeds = [1]
record_wall_time = false

[data]
source = "idx"
dir = "synth"
train_count = 150
valid_count = 50

[train]
learning_rate = 1.0
batch_size = 16
max_epochs = 2
early_stop_patience = 1
lr_decay = 0.5
"#;
    fs::write(dir.join("sweep.toml"), sweep).unwrap();
    ok(&qbnet(dir, &["sweep", "--config", "sweep.toml", "-o", "full.csv"]));
    ok(&qbnet(dir, &["sweep", "--config", "sweep.toml", "-o", "part.csv", "--max-cells", "2"]));
    assert_eq!(fs::read_to_string(dir.join("part.csv")).unwrap().lines().count(), 3);
    ok(&qbnet(dir, &["sweep", "--config", "sweep.toml", "-o", "part.csv"]));
    assert_eq!(fs::read(dir.join("full.csv")).unwrap(), fs::read(dir.join("part.csv")).unwrap());
    assert_eq!(fs::read_to_string(dir.join("full.csv")).unwrap().lines().count(), 7);
}
