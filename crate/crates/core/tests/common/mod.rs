#![allow(dead_code)]

use qbnet::data::Dataset;
use qbnet::nn::{build_cnn_with, build_fcdnn, Network};
use qbnet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small FCDNN (183 parameters) with random biases.
pub fn small_fcdnn(seed: u64) -> Network<f64> {
    let mut net = build_fcdnn::<f64>(6, 5, 3, seed).unwrap();
    randomize_biases(&mut net, seed);
    net
}

/// Small CNN on 1×8×8 inputs (283 parameters) with random biases.
pub fn small_cnn(seed: u64) -> Network<f64> {
    let mut net = build_cnn_with::<f64>([1, 8, 8], (2, 2, 2), 4, 3, seed).unwrap();
    randomize_biases(&mut net, seed);
    net
}

pub fn randomize_biases(net: &mut Network<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for i in 0..net.num_param_layers() {
        for b in net.bias_mut(i) {
            *b = rng.gen_range(-0.3..0.3);
        }
    }
}

pub fn random_batch(shape: &[usize], rows: usize, classes: usize, seed: u64) -> (Tensor<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut full = vec![rows];
    full.extend_from_slice(shape);
    let x = Tensor::from_fn(full, |_| rng.gen_range(-1.0..1.0));
    let labels = (0..rows).map(|_| rng.gen_range(0..classes)).collect();
    (x, labels)
}

/// Two well-separated Gaussian blobs per class in `features` dimensions.
pub fn blobs(samples: usize, features: usize, classes: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f32>> = (0..classes)
        .map(|_| (0..features).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let labels: Vec<usize> = (0..samples).map(|i| i % classes).collect();
    let mut data = Vec::with_capacity(samples * features);
    for &l in &labels {
        data.extend(centers[l].iter().map(|c| c + rng.gen_range(-0.3f32..0.3)));
    }
    Dataset::new("blobs", Tensor::new(vec![samples, features], data).unwrap(), labels, classes)
        .unwrap()
}

/// Max relative difference between analytic and central-difference
/// gradients over every parameter.
pub fn max_gradient_error(net: &Network<f64>, x: &Tensor<f64>, y: &[usize]) -> f64 {
    let (_, grads) = net.loss_and_gradients(x, y).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut probe = net.clone();
    let loss = |n: &Network<f64>| n.loss_and_gradients(x, y).unwrap().0;
    for layer in 0..net.num_param_layers() {
        for (is_bias, analytic) in [(false, &grads.weights[layer]), (true, &grads.biases[layer])] {
            for i in 0..analytic.len() {
                let orig = *slot(&mut probe, layer, is_bias, i);
                *slot(&mut probe, layer, is_bias, i) = orig + h;
                let up = loss(&probe);
                *slot(&mut probe, layer, is_bias, i) = orig - h;
                let down = loss(&probe);
                *slot(&mut probe, layer, is_bias, i) = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic.data()[i];
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((a - numeric).abs() / denom);
            }
        }
    }
    worst
}

fn slot(net: &mut Network<f64>, layer: usize, is_bias: bool, i: usize) -> &mut f64 {
    if is_bias {
        &mut net.bias_mut(layer)[i]
    } else {
        &mut net.weight_mut(layer)[i]
    }
}

/// Error of the analytic curve family `a + b / (N (1 - 2^-n))`.
pub fn analytic_error(size: f64, bits: u32) -> f64 {
    0.1 + 8.0 / (size * (1.0 - 2f64.powi(-(bits as i32))))
}

/// Closed-form equivalent size of `reference` for `bits`-bit weights.
pub fn analytic_equivalent_size(reference: f64, bits: u32) -> f64 {
    reference * (1.0 - 2f64.powi(-32)) / (1.0 - 2f64.powi(-(bits as i32)))
}

/// Integer layer sizes spaced 2^(1/8) apart from 32 to 2048.
pub fn analytic_sizes() -> Vec<u64> {
    let mut s: Vec<u64> = (0..=48).map(|k| (32.0 * 2f64.powf(k as f64 / 8.0)).round() as u64).collect();
    s.dedup();
    s
}

/// Sweep records sampled from the analytic family: a float curve plus
/// retrain curves for `bits`.
pub fn analytic_records(bits: &[u32]) -> Vec<qbnet::sweep::RunRecord> {
    use qbnet::nn::Family;
    use qbnet::sweep::{Method, Precision, RunRecord};
    let mut out = Vec::new();
    let precisions = std::iter::once((Precision::Float32, Method::Float, 32))
        .chain(bits.iter().map(|&b| (Precision::Bits(b), Method::Retrain, b)));
    for (p, m, b) in precisions {
        for &n in &analytic_sizes() {
            let e = analytic_error(n as f64, b);
            out.push(RunRecord {
                config_hash: out.len() as u64,
                family: Family::Fcdnn,
                size_label: n.to_string(),
                size_param_count: 3 * n * n + (784 + 10 + 4) * n + 10,
                bits: p,
                method: m,
                seed: 0,
                valid_error: e,
                test_error: e,
                wall_seconds: 0.0,
            });
        }
    }
    out
}
