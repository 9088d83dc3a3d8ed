//! Weight quantization to `2^n - 1` symmetric levels.
//!
//! A weight `w` maps to `Δ · clip(round(w / Δ), -(M-1)/2, (M-1)/2)` where `M`
//! is the level count and rounding is half away from zero. Each
//! parameterized layer gets its own step size `Δ`, chosen to minimize the
//! squared quantization error; biases stay in full precision.

use log::debug;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{fit, EpochModel, Network, TrainConfig};
use crate::tensor::{Real, Tensor};

pub const MIN_BITS: u32 = 2;
pub const MAX_BITS: u32 = 16;
/// Number of candidate step sizes scanned by [`optimize_step_size`].
pub const STEP_GRID_POINTS: usize = 1000;

/// Level count `2^n - 1` for an `n`-bit quantizer.
pub fn levels_for_bits(bits: u32) -> Result<u32> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(Error::InvalidArgument(format!(
            "bit width must lie in [{MIN_BITS}, {MAX_BITS}], got {bits}"
        )));
    }
    Ok((1 << bits) - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerSpec {
    bits: u32,
    step_sizes: Vec<f64>,
}

impl QuantizerSpec {
    pub fn new(bits: u32, step_sizes: Vec<f64>) -> Result<Self> {
        levels_for_bits(bits)?;
        if let Some(bad) = step_sizes.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {bad}")));
        }
        Ok(Self { bits, step_sizes })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn levels(&self) -> u32 {
        (1 << self.bits) - 1
    }

    /// Largest level index magnitude, `(M - 1) / 2`.
    pub fn max_index(&self) -> i32 {
        (self.levels() as i32 - 1) / 2
    }

    pub fn step_sizes(&self) -> &[f64] {
        &self.step_sizes
    }
}

fn check_levels(levels: u32) -> Result<f64> {
    if levels < 3 || levels.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "level count must be odd and at least 3, got {levels}"
        )));
    }
    Ok(((levels - 1) / 2) as f64)
}

fn check_step(step: f64) -> Result<()> {
    if step > 0.0 && step.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("step size must be positive, got {step}")))
    }
}

#[inline]
fn level_index(w: f64, step: f64, half: f64) -> f64 {
    // f64::round rounds half away from zero; adding 0.0 turns -0 into +0.
    (w / step).round().clamp(-half, half) + 0.0
}

/// Elementwise quantization onto `levels` equally spaced values.
pub fn quantize_tensor<T: Real>(w: &Tensor<T>, step: f64, levels: u32) -> Result<Tensor<T>> {
    let mut out = w.clone();
    quantize_slice_into(w.data(), step, levels, out.data_mut())?;
    Ok(out)
}

fn quantize_slice_into<T: Real>(src: &[T], step: f64, levels: u32, dst: &mut [T]) -> Result<()> {
    let half = check_levels(levels)?;
    check_step(step)?;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = T::from_f64_lossy(step * level_index(s.to_f64_lossy(), step, half));
    }
    Ok(())
}

/// Integer level indices `k` with `Q(w) = k · Δ`.
pub fn level_indices<T: Real>(w: &Tensor<T>, step: f64, levels: u32) -> Result<Vec<i32>> {
    let half = check_levels(levels)?;
    check_step(step)?;
    Ok(w.data()
        .iter()
        .map(|&v| level_index(v.to_f64_lossy(), step, half) as i32)
        .collect())
}

/// Sum of squared quantization errors `Σ (w - Q(w))²`.
pub fn quantization_residual<T: Real>(w: &[T], step: f64, levels: u32) -> Result<f64> {
    let half = check_levels(levels)?;
    check_step(step)?;
    Ok(residual(w, step, half))
}

fn residual<T: Real>(w: &[T], step: f64, half: f64) -> f64 {
    w.iter()
        .map(|&v| {
            let x = v.to_f64_lossy();
            let r = x - step * level_index(x, step, half);
            r * r
        })
        .sum()
}

/// Candidate step sizes: `STEP_GRID_POINTS` uniform points on
/// `(0, 2·max|w| / ((M-1)/2)]`.
pub fn step_grid(max_abs: f64, levels: u32) -> Result<Vec<f64>> {
    let half = check_levels(levels)?;
    let upper = 2.0 * max_abs / half;
    Ok((1..=STEP_GRID_POINTS)
        .map(|i| upper * (i as f64 / STEP_GRID_POINTS as f64))
        .collect())
}

/// Step size minimizing the squared quantization error over [`step_grid`].
/// Ties keep the smallest step. An all-zero tensor has no defined step and
/// yields [`Error::Degenerate`].
pub fn optimize_step_size<T: Real>(w: &Tensor<T>, levels: u32) -> Result<f64> {
    let half = check_levels(levels)?;
    let max_abs = w.max_abs().to_f64_lossy();
    if max_abs == 0.0 {
        return Err(Error::Degenerate(format!(
            "all-zero tensor of shape {:?}",
            w.shape()
        )));
    }
    let mut best = (f64::INFINITY, 0.0);
    for step in step_grid(max_abs, levels)? {
        let r = residual(w.data(), step, half);
        if r < best.0 {
            best = (r, step);
        }
    }
    Ok(best.1)
}

/// Per-layer L2-optimal step sizes for an `n`-bit quantizer.
pub fn layer_step_sizes<T: Real>(net: &Network<T>, bits: u32) -> Result<QuantizerSpec> {
    let levels = levels_for_bits(bits)?;
    let steps = net
        .weights()
        .iter()
        .enumerate()
        .map(|(i, w)| {
            optimize_step_size(w, levels).map_err(|e| match e {
                Error::Degenerate(m) => Error::Degenerate(format!("layer {i}: {m}")),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    QuantizerSpec::new(bits, steps)
}

/// Copy of `net` with every weight tensor quantized under `spec`; biases are
/// copied unchanged.
pub fn apply_quantizer<T: Real>(net: &Network<T>, spec: &QuantizerSpec) -> Result<Network<T>> {
    let mut out = net.clone();
    quantize_weights_into(net, spec, &mut out)?;
    Ok(out)
}

fn quantize_weights_into<T: Real>(
    src: &Network<T>,
    spec: &QuantizerSpec,
    dst: &mut Network<T>,
) -> Result<()> {
    if spec.step_sizes.len() != src.num_param_layers() {
        return Err(Error::Shape(format!(
            "{} step sizes for {} parameterized layers",
            spec.step_sizes.len(),
            src.num_param_layers()
        )));
    }
    for (i, &step) in spec.step_sizes.iter().enumerate() {
        quantize_slice_into(src.weights()[i].data(), step, spec.levels(), dst.weight_mut(i))?;
        dst.bias_mut(i).copy_from_slice(src.biases()[i].data());
    }
    Ok(())
}

/// Quantizes every layer's weights with its own optimal step size, without
/// further training.
pub fn direct_quantize<T: Real>(net: &Network<T>, bits: u32) -> Result<(Network<T>, QuantizerSpec)> {
    let spec = layer_step_sizes(net, bits)?;
    Ok((apply_quantizer(net, &spec)?, spec))
}

/// Retraining state: a full-precision master network receives the SGD
/// updates while the forward and backward passes run on its quantized view.
#[derive(Debug, Clone)]
pub struct ShadowState {
    master: Network<f32>,
    view: Network<f32>,
    spec: QuantizerSpec,
    epochs_started: usize,
}

impl ShadowState {
    pub fn new(master: Network<f32>, bits: u32) -> Result<Self> {
        let spec = layer_step_sizes(&master, bits)?;
        let view = apply_quantizer(&master, &spec)?;
        Ok(Self {
            master,
            view,
            spec,
            epochs_started: 0,
        })
    }

    pub fn master(&self) -> &Network<f32> {
        &self.master
    }

    pub fn quantized_view(&self) -> &Network<f32> {
        &self.view
    }

    pub fn spec(&self) -> &QuantizerSpec {
        &self.spec
    }

    fn requantize(&mut self) -> Result<()> {
        quantize_weights_into(&self.master, &self.spec, &mut self.view)
    }
}

impl EpochModel for ShadowState {
    type Snapshot = (Network<f32>, QuantizerSpec, Network<f32>);

    fn begin_epoch(&mut self) -> Result<()> {
        if self.epochs_started > 0 {
            self.spec = layer_step_sizes(&self.master, self.spec.bits)?;
            debug!("re-optimized step sizes: {:?}", self.spec.step_sizes);
        }
        self.epochs_started += 1;
        self.requantize()
    }

    fn step(&mut self, batch: &Tensor<f32>, labels: &[usize], lr: f32) -> Result<()> {
        self.requantize()?;
        let (_, grads) = self.view.loss_and_gradients(batch, labels)?;
        self.master.sgd_update(&grads, lr)
    }

    fn current(&mut self) -> &Network<f32> {
        self.requantize().expect("spec matches master");
        &self.view
    }

    fn snapshot(&self) -> Self::Snapshot {
        (self.view.clone(), self.spec.clone(), self.master.clone())
    }
}

/// Result of quantization-aware retraining.
#[derive(Debug, Clone)]
pub struct Retrained {
    /// Quantized network at the best validation epoch.
    pub network: Network<f32>,
    pub spec: QuantizerSpec,
    /// Full-precision master weights that produced `network`.
    pub master: Network<f32>,
    pub history: Vec<f64>,
}

/// Retrains a float network with `n`-bit weights in the loop. Step sizes are
/// re-optimized from the master weights at the start of every epoch after
/// the first. With `max_epochs == 0` the result equals [`direct_quantize`].
pub fn retrain(
    net: &Network<f32>,
    bits: u32,
    train_set: &Dataset,
    valid_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<Retrained> {
    let seed = net.seed();
    let mut state = ShadowState::new(net.clone(), bits)?;
    let (history, (network, spec, master)) = fit(&mut state, train_set, valid_set, cfg, seed)?;
    Ok(Retrained {
        network,
        spec,
        master,
        history,
    })
}
