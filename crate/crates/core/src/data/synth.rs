use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters of the Gaussian frame-classification generator. Defaults
/// match the 1353-input, 61-class phoneme network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub samples: usize,
    #[serde(default = "default_features")]
    pub features: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    pub separation: f64,
    pub seed: u64,
}

fn default_features() -> usize {
    1353
}

fn default_classes() -> usize {
    61
}

/// Class `c` is drawn from `N(separation · u_c, I)` with `u_c` a random unit
/// direction fixed by the seed. Sample `i` belongs to class `i mod classes`,
/// so class counts differ by at most one.
pub fn synth_frames(p: &SynthParams) -> Result<Dataset> {
    if p.features == 0 || p.classes == 0 {
        return Err(Error::InvalidArgument("features and classes must be positive".into()));
    }
    if p.samples < p.classes {
        return Err(Error::InvalidArgument(format!(
            "need at least one sample per class ({} < {})",
            p.samples, p.classes
        )));
    }
    if !p.separation.is_finite() || p.separation < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "class separation must be a finite non-negative number, got {}",
            p.separation
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut means = Vec::with_capacity(p.classes * p.features);
    for _ in 0..p.classes {
        let dir: Vec<f64> = (0..p.features).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        means.extend(dir.iter().map(|v| p.separation * v / norm));
    }
    let mut data = Vec::with_capacity(p.samples * p.features);
    let mut labels = Vec::with_capacity(p.samples);
    for i in 0..p.samples {
        let c = i % p.classes;
        let mu = &means[c * p.features..(c + 1) * p.features];
        data.extend(mu.iter().map(|&m| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (m + z) as f32
        }));
        labels.push(c);
    }
    Dataset::new(
        format!("synth-s{}", p.seed),
        Tensor::new(vec![p.samples, p.features], data)?,
        labels,
        p.classes,
    )
}
