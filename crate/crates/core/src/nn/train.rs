use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Network;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Rows per forward pass during evaluation.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive non-improving epochs tolerated before stopping.
    pub early_stop_patience: usize,
    /// Learning-rate multiplier applied after every non-improving epoch.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 32,
            max_epochs: 20,
            early_stop_patience: 3,
            lr_decay: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        Ok(())
    }
}

/// Fraction of samples whose arg-max prediction differs from the label.
/// Ties go to the lowest class index.
pub fn evaluate<T: Real>(net: &Network<T>, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset(data.name().to_string()));
    }
    let features = data.features();
    let mut wrong = 0usize;
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let batch: Tensor<T> = features.select_rows(chunk).cast();
        let probs = net.predict(&batch)?;
        for (row, &i) in chunk.iter().enumerate() {
            if argmax(probs.row(row)) != data.labels()[i] {
                wrong += 1;
            }
        }
    }
    Ok(wrong as f64 / data.len() as f64)
}

pub(crate) fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// A trainable state driven epoch by epoch by [`fit`].
pub(crate) trait EpochModel {
    type Snapshot;

    fn begin_epoch(&mut self) -> Result<()>;
    fn step(&mut self, batch: &Tensor<f32>, labels: &[usize], lr: f32) -> Result<()>;
    /// The network whose validation error is tracked.
    fn current(&mut self) -> &Network<f32>;
    fn snapshot(&self) -> Self::Snapshot;
}

/// Shared epoch loop: shuffled minibatch SGD with validation-driven
/// learning-rate decay and early stopping. The starting point counts as a
/// candidate, so the returned snapshot is never worse on validation than
/// the input. Returns the per-epoch validation errors and the best snapshot.
pub(crate) fn fit<M: EpochModel>(
    model: &mut M,
    train_set: &Dataset,
    valid_set: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Vec<f64>, M::Snapshot)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset(train_set.name().to_string()));
    }
    if valid_set.is_empty() {
        return Err(Error::EmptyDataset(valid_set.name().to_string()));
    }
    let mut history = Vec::new();
    if cfg.max_epochs == 0 {
        return Ok((history, model.snapshot()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut lr = cfg.learning_rate;
    let mut best_err = evaluate(model.current(), valid_set)?;
    let mut best = model.snapshot();
    let mut stalled = 0;

    for epoch in 0..cfg.max_epochs {
        model.begin_epoch()?;
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train_set.features().select_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels()[i]).collect();
            model.step(&batch, &labels, lr as f32)?;
        }
        let err = evaluate(model.current(), valid_set)?;
        history.push(err);
        debug!("epoch {epoch}: valid error {err:.4} (lr {lr:.4})");
        if err < best_err {
            best_err = err;
            best = model.snapshot();
            stalled = 0;
        } else {
            stalled += 1;
            lr *= cfg.lr_decay;
            if stalled > cfg.early_stop_patience {
                break;
            }
        }
    }
    Ok((history, best))
}

struct FloatModel(Network<f32>);

impl EpochModel for FloatModel {
    type Snapshot = Network<f32>;

    fn begin_epoch(&mut self) -> Result<()> {
        Ok(())
    }

    fn step(&mut self, batch: &Tensor<f32>, labels: &[usize], lr: f32) -> Result<()> {
        let (_, grads) = self.0.loss_and_gradients(batch, labels)?;
        self.0.sgd_update(&grads, lr)
    }

    fn current(&mut self) -> &Network<f32> {
        &self.0
    }

    fn snapshot(&self) -> Network<f32> {
        self.0.clone()
    }
}

/// Floating-point training. Returns the parameters with the lowest
/// validation error and the per-epoch validation history.
pub fn train(
    net: Network<f32>,
    train_set: &Dataset,
    valid_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Network<f32>, Vec<f64>)> {
    let seed = net.seed();
    let mut model = FloatModel(net);
    let (history, best) = fit(&mut model, train_set, valid_set, cfg, seed)?;
    Ok((best, history))
}
