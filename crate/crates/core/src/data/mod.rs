//! Datasets: CIFAR-10 binary batches, IDX files (MNIST) and a synthetic
//! frame-classification generator, plus deterministic train/valid splits.

mod cifar;
mod idx;
mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cifar::{load_cifar10, read_cifar10_batch, write_cifar10_batch, CIFAR_RECORD_LEN};
pub use idx::{
    load_idx_pair, load_mnist_idx, write_idx_f32, write_idx_labels, write_idx_u8,
    IDX_F32_MATRIX_MAGIC, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use synth::{synth_frames, SynthParams};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labelled samples. `features` has shape `[num_samples, ...sample_shape]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor<f32>,
    labels: Vec<usize>,
    num_classes: usize,
    name: String,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Tensor<f32>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one class".into()));
        }
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if !features.is_finite() {
            return Err(Error::InvalidArgument("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Tensor<f32> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Shape of a single sample, e.g. `[784]` or `[3, 32, 32]`.
    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset("empty subset".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidArgument(format!(
                "sample index {bad} out of range for {} samples",
                self.len()
            )));
        }
        Ok(Self {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            name: name.into(),
        })
    }

    /// The first `n` samples (or all of them when `n` exceeds the size).
    pub fn take(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx, self.name.clone())
    }

    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if self.sample_shape() != other.sample_shape() || self.num_classes != other.num_classes {
            return Err(Error::Shape("datasets are not compatible".into()));
        }
        let mut data = self.features.data().to_vec();
        data.extend_from_slice(other.features.data());
        let mut shape = self.features.shape().to_vec();
        shape[0] += other.len();
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Dataset::new(self.name.clone(), Tensor::new(shape, data)?, labels, self.num_classes)
    }

    /// Class count per label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_count: usize,
    pub valid_count: usize,
    pub seed: u64,
}

/// Index sets chosen by [`split`], in permutation order.
pub fn split_indices(len: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if spec.train_count == 0 || spec.valid_count == 0 {
        return Err(Error::InvalidArgument(format!(
            "split counts must be positive, got train={} valid={}",
            spec.train_count, spec.valid_count
        )));
    }
    if spec.train_count + spec.valid_count > len {
        return Err(Error::InvalidArgument(format!(
            "split of {}+{} exceeds {len} samples",
            spec.train_count, spec.valid_count
        )));
    }
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let valid = perm[spec.train_count..spec.train_count + spec.valid_count].to_vec();
    perm.truncate(spec.train_count);
    Ok((perm, valid))
}

/// Seed-deterministic disjoint train/validation partition.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train, valid) = split_indices(dataset.len(), spec)?;
    Ok((
        dataset.subset(&train, format!("{}-train", dataset.name()))?,
        dataset.subset(&valid, format!("{}-valid", dataset.name()))?,
    ))
}
