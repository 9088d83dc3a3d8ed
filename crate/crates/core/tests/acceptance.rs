//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! The two trend criteria train real networks on MNIST and CIFAR-10 and take
//! a long time on first run. Their sweeps resume from results files under
//! `target/acceptance/`, so later runs only re-check the stored results.
//! They are skipped when the datasets are not present (see
//! `scripts/fetch_datasets.py`).

mod common;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{analytic_equivalent_size, analytic_records, max_gradient_error, random_batch};
use qbnet::ecr::{build_ecr_report, compute_ecr, fit_curves, ParamModel};
use qbnet::nn::{build_cnn, build_cnn_with, build_fcdnn, LayerSpec, Network};
use qbnet::quant::{levels_for_bits, optimize_step_size, quantize_tensor};
use qbnet::sweep::{
    run_sweep, run_sweep_limited, summarize, Method, Precision, SummaryKey, SweepConfig,
};
use qbnet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Outcome;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn data_dir() -> PathBuf {
    std::env::var_os("QBNET_DATA_DIR").map_or_else(|| workspace_root().join("data"), PathBuf::from)
}

fn results_dir() -> PathBuf {
    let target = std::env::var_os("CARGO_TARGET_DIR")
        .map_or_else(|| workspace_root().join("target"), PathBuf::from);
    let dir = target.join("acceptance");
    std::fs::create_dir_all(&dir).expect("create acceptance results directory");
    dir
}

fn within(elapsed: Duration, limit_secs: f64) -> (bool, String) {
    let s = elapsed.as_secs_f64();
    (s < limit_secs, format!("{s:.2}s (limit {limit_secs}s)"))
}

// 1. Quantizer invariants and step-size search.

fn oracle_step(w: &[f64], levels: u32, points: usize) -> (f64, f64) {
    let half = ((levels - 1) / 2) as f64;
    let max = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let upper = 2.0 * max / half;
    let mut best = (f64::INFINITY, 0.0);
    for i in 1..=points {
        let step = upper * i as f64 / points as f64;
        let sse: f64 = w
            .iter()
            .map(|&v| {
                let k = (v / step).round().clamp(-half, half);
                (v - k * step).powi(2)
            })
            .sum();
        if sse < best.0 {
            best = (sse, step);
        }
    }
    (best.1, upper / 1000.0)
}

fn quantizer_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut violations = Vec::new();
    for t in 0..1000 {
        let len = rng.gen_range(1..=256);
        let scale = 10f64.powf(rng.gen_range(-3.0..1.0));
        let normal = Normal::new(0.0, scale).unwrap();
        let w: Vec<f64> = (0..len).map(|_| normal.sample(&mut rng)).collect();
        let bits = rng.gen_range(2..=8);
        let m = levels_for_bits(bits).unwrap();
        let tensor = Tensor::new(vec![len], w.clone()).unwrap();
        let step = optimize_step_size(&tensor, m).unwrap();
        let q = quantize_tensor(&tensor, step, m).unwrap();
        if quantize_tensor(&q, step, m).unwrap() != q {
            violations.push(format!("tensor {t}: not idempotent"));
        }
        let qn = quantize_tensor(&tensor.map(|v| -v), step, m).unwrap();
        if q.data().iter().zip(qn.data()).any(|(a, b)| *a != -*b) {
            violations.push(format!("tensor {t}: not odd"));
        }
        let mut pairs: Vec<(f64, f64)> = w.iter().copied().zip(q.data().iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pairs.windows(2).any(|p| p[0].1 > p[1].1) {
            violations.push(format!("tensor {t}: not monotone"));
        }
        let distinct: BTreeSet<u64> = q.data().iter().map(|v| v.to_bits()).collect();
        if distinct.len() > m as usize {
            violations.push(format!("tensor {t}: {} levels > {m}", distinct.len()));
        }
    }
    let mut worst = 0.0f64;
    for t in 0..50 {
        let len = rng.gen_range(2..=200);
        let w: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = if t % 2 == 0 { 3 } else { 7 };
        let step = optimize_step_size(&Tensor::new(vec![len], w.clone()).unwrap(), m).unwrap();
        let (oracle, spacing) = oracle_step(&w, m, 100_000);
        let off = (step - oracle).abs() / spacing;
        worst = worst.max(off);
        if off > 1.0 {
            violations.push(format!("tensor {t}: step {step} vs oracle {oracle} ({off:.2} spacings)"));
        }
    }
    let (fast, time) = within(start.elapsed(), 60.0);
    verdict(
        violations.is_empty() && fast,
        format!(
            "1000 tensors checked, worst oracle offset {worst:.3} coarse spacings, {time}{}",
            violations.first().map_or(String::new(), |v| format!("; first violation: {v}"))
        ),
    )
}

// 2. Gradient correctness.

fn random_fcdnn(rng: &mut ChaCha8Rng, seed: u64) -> Network<f64> {
    loop {
        let inputs = rng.gen_range(2..=8);
        let hidden = rng.gen_range(2..=8);
        let outputs = rng.gen_range(2..=4);
        let mut net = build_fcdnn::<f64>(hidden, inputs, outputs, seed).unwrap();
        if net.count_parameters() <= 500 {
            common::randomize_biases(&mut net, seed);
            return net;
        }
    }
}

fn random_cnn(rng: &mut ChaCha8Rng, seed: u64) -> Network<f64> {
    loop {
        let channels = rng.gen_range(1..=2);
        let maps = (rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let fc = rng.gen_range(2..=4);
        let outputs = rng.gen_range(2..=3);
        let mut net = build_cnn_with::<f64>([channels, 8, 8], maps, fc, outputs, seed).unwrap();
        if net.count_parameters() <= 500 {
            common::randomize_biases(&mut net, seed);
            return net;
        }
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut params = 0;
    for i in 0..20u64 {
        let net = if i % 2 == 0 {
            random_fcdnn(&mut rng, i)
        } else {
            random_cnn(&mut rng, i)
        };
        params += net.count_parameters();
        let (x, y) = random_batch(net.input_shape(), 3, net.num_outputs(), 1000 + i);
        worst = worst.max(max_gradient_error(&net, &x, &y));
    }
    let (fast, time) = within(start.elapsed(), 120.0);
    verdict(
        worst < 1e-4 && fast,
        format!("20 networks, {params} parameters, max relative error {worst:.2e}, {time}"),
    )
}

// 3. ECR exactness.

fn ecr_exactness() -> Outcome {
    let start = Instant::now();
    let sq = ParamModel::SquareApprox;
    let a = compute_ecr(32, 256.0, 3, 256.0, &sq);
    let b = compute_ecr(32, 256.0, 3, 512.0, &sq);
    let worked = (a - 32.0 / 3.0).abs() <= 1e-9 && (b - 8.0 / 3.0).abs() <= 1e-9;
    let records = analytic_records(&[2, 3, 4, 8]);
    let curves = fit_curves(&records, Method::Retrain).unwrap();
    let reports = build_ecr_report(&curves, &[64.0, 128.0, 256.0, 512.0], &sq).unwrap();
    let mut worst = 0.0f64;
    for r in &reports {
        for e in &r.entries {
            let n1 = analytic_equivalent_size(r.reference_size, e.bits);
            let want = compute_ecr(32, r.reference_size, e.bits, n1, &sq);
            worst = worst.max((e.ecr - want).abs() / want);
        }
    }
    let (fast, time) = within(start.elapsed(), 1.0);
    verdict(
        worked && worst < 0.01 && fast,
        format!(
            "256->256 @3b = {a:.12}, 256->512 @3b = {b:.12}, analytic fixture max deviation {:.3}%, {time}",
            worst * 100.0
        ),
    )
}

// 4 and 5. Trend reproduction on real data.

fn cnn_sweep_config() -> SweepConfig {
    SweepConfig::from_toml(include_str!("acceptance/cifar10_cnn.toml")).unwrap()
}

fn fcdnn_sweep_config() -> SweepConfig {
    SweepConfig::from_toml(include_str!("acceptance/mnist_fcdnn.toml")).unwrap()
}

type Summary = std::collections::BTreeMap<SummaryKey, qbnet::sweep::CellSummary>;

/// Summary of the sweep and the recorded compute time in minutes.
fn run_trend_sweep(cfg: &SweepConfig, name: &str, needs: &str) -> Result<(Summary, f64), Outcome> {
    let data = data_dir();
    if !data.join(needs).exists() {
        return Err(Outcome::Skip(format!(
            "dataset not found under {}; fetch it with scripts/fetch_datasets.py",
            data.display()
        )));
    }
    let out = results_dir().join(name);
    match run_sweep(cfg, &out, &data) {
        Ok(o) => {
            let minutes = o.records.iter().map(|r| r.wall_seconds).sum::<f64>() / 60.0;
            Ok((summarize(&o.records), minutes))
        }
        Err(e) => Err(Outcome::Fail(format!("sweep failed: {e}"))),
    }
}

fn mean(s: &Summary, cfg: &SweepConfig, size: &str, bits: Precision, method: Method) -> (f64, f64) {
    let key = SummaryKey {
        family: cfg.family,
        size_label: size.to_string(),
        bits,
        method,
    };
    let c = &s[&key];
    (c.test_mean, c.test_std_error)
}

fn cnn_trend() -> Outcome {
    let cfg = cnn_sweep_config();
    let (s, minutes) = match run_trend_sweep(&cfg, "cifar10_cnn.csv", "cifar-10-batches-bin") {
        Ok(s) => s,
        Err(o) => return o,
    };
    let two = Precision::Bits(2);
    let mut detail = Vec::new();
    let mut retrain_wins = true;
    let mut gaps = Vec::new();
    for size in &cfg.sizes {
        let (f, _) = mean(&s, &cfg, size, Precision::Float32, Method::Float);
        let (d, _) = mean(&s, &cfg, size, two, Method::Direct);
        let (r, _) = mean(&s, &cfg, size, two, Method::Retrain);
        retrain_wins &= r < d;
        gaps.push(r - f);
        detail.push(format!("{size}: float {f:.4} direct {d:.4} retrain {r:.4}"));
    }
    let shrinks = gaps.last() < gaps.first();
    verdict(
        retrain_wins && shrinks,
        format!(
            "retrain < direct at every size: {retrain_wins}; gap {:.4} -> {:.4} shrinks: {shrinks}; {}; sweep compute {minutes:.1} min (target 120)",
            gaps[0],
            gaps[gaps.len() - 1],
            detail.join("; "),
        ),
    )
}

fn fcdnn_trend() -> Outcome {
    let cfg = fcdnn_sweep_config();
    let (s, minutes) = match run_trend_sweep(&cfg, "mnist_fcdnn.csv", "mnist") {
        Ok(s) => s,
        Err(o) => return o,
    };
    let mut detail = Vec::new();
    let mut bits_ok = true;
    let mut gaps = Vec::new();
    for size in &cfg.sizes {
        let curve: Vec<(f64, f64)> = cfg
            .bit_widths
            .iter()
            .map(|&b| mean(&s, &cfg, size, Precision::Bits(b), Method::Retrain))
            .collect();
        for p in curve.windows(2) {
            let (lo, hi) = (p[0], p[1]);
            bits_ok &= hi.0 <= lo.0 + (lo.1.powi(2) + hi.1.powi(2)).sqrt();
        }
        let (f, _) = mean(&s, &cfg, size, Precision::Float32, Method::Float);
        let gap = curve[0].0 - f;
        gaps.push(gap);
        let errs: Vec<String> = curve.iter().map(|c| format!("{:.4}±{:.4}", c.0, c.1)).collect();
        detail.push(format!("{size}: float {f:.4} retrain {}", errs.join(" ")));
    }
    let shrinks = gaps.windows(2).all(|g| g[1] < g[0]);
    verdict(
        bits_ok && shrinks,
        format!(
            "retrain error non-increasing in bits: {bits_ok}; 2-bit gaps {:?} shrink: {shrinks}; {}; sweep compute {minutes:.1} min (target 120)",
            gaps.iter().map(|g| (g * 1e4).round() / 1e4).collect::<Vec<_>>(),
            detail.join("; "),
        ),
    )
}

// 6 and 8. Pipeline determinism and resume.

fn small_sweep() -> SweepConfig {
    SweepConfig::from_toml(include_str!("acceptance/small_synth.toml")).unwrap()
}

fn pipeline_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_sweep();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        if let Err(e) = run_sweep(&cfg, p, dir.path()) {
            return Outcome::Fail(format!("sweep failed: {e}"));
        }
    }
    let (ba, bb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let rows = ba.iter().filter(|&&c| c == b'\n').count() - 1;
    verdict(ba == bb, format!("two runs of a {rows}-cell sweep, byte-identical: {}", ba == bb))
}

fn resume_contract() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_sweep();
    let full = dir.path().join("full.csv");
    run_sweep(&cfg, &full, dir.path()).unwrap();
    let want = std::fs::read(&full).unwrap();
    let total = cfg.cells().unwrap().len();
    let mut mismatches = Vec::new();
    for k in 1..total {
        let out = dir.path().join(format!("cut{k}.csv"));
        let first = run_sweep_limited(&cfg, &out, dir.path(), Some(k)).unwrap();
        assert!(!first.complete && first.new_cells == k);
        // A write torn by the interruption.
        let mut f = std::fs::OpenOptions::new().append(true).open(&out).unwrap();
        std::io::Write::write_all(&mut f, b"0123abcd,fcd").unwrap();
        let second = run_sweep(&cfg, &out, dir.path()).unwrap();
        if std::fs::read(&out).unwrap() != want || second.new_cells != total - k {
            mismatches.push(k);
        }
    }
    verdict(
        mismatches.is_empty(),
        format!(
            "interrupted after k = 1..{} of {total} cells and resumed; mismatching k: {mismatches:?}",
            total - 1
        ),
    )
}

// 7. Parameter counts.

fn per_layer_sum(net: &Network<f32>) -> usize {
    let mut width = net.input_width();
    let mut shape = net.input_shape().to_vec();
    let mut total = 0;
    for layer in net.layers() {
        match *layer {
            LayerSpec::Dense { inputs, outputs } => {
                assert_eq!(inputs, width);
                total += inputs * outputs + outputs;
                width = outputs;
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                ..
            } => {
                total += in_channels * out_channels * 25 + out_channels;
                shape[0] = out_channels;
                width = shape.iter().product();
            }
            LayerSpec::MaxPool2x2 { .. } => {
                shape[1] /= 2;
                shape[2] /= 2;
                width = shape.iter().product();
            }
            LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::Softmax => {}
        }
    }
    total
}

fn parameter_counts() -> Outcome {
    let nets: [(&str, Network<f32>, usize); 3] = [
        ("FCDNN 256", build_fcdnn(256, 1353, 61, 0).unwrap(), 559_677),
        ("FCDNN 512", build_fcdnn(512, 1353, 61, 0).unwrap(), 1_512_509),
        ("CNN 32-32-64", build_cnn((32, 32, 64), 0).unwrap(), 145_578),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, net, want) in &nets {
        let counted = net.count_parameters();
        let summed = per_layer_sum(net);
        ok &= counted == *want && summed == *want;
        detail.push(format!("{name}: {counted} (per-layer {summed}, expected {want})"));
    }
    verdict(ok, detail.join("; "))
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let checks: [(u32, &str, Check); 8] = [
        (1, "quantizer suite", quantizer_suite),
        (2, "gradient correctness", gradient_correctness),
        (3, "ECR exactness", ecr_exactness),
        (4, "CNN trend on CIFAR-10", cnn_trend),
        (5, "FCDNN trend on MNIST", fcdnn_trend),
        (6, "pipeline determinism", pipeline_determinism),
        (7, "parameter counts", parameter_counts),
        (8, "resume contract", resume_contract),
    ];
    let filter: Vec<&String> = args.iter().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (n, name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let line = match check() {
            Outcome::Pass(d) => format!("PASS  {n}. {name}: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                format!("FAIL  {n}. {name}: {d}")
            }
            Outcome::Skip(d) => format!("SKIP  {n}. {name}: {d}"),
        };
        println!("{line}");
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
