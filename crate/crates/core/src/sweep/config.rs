use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::records::{Method, Precision};
use crate::data::{
    load_cifar10, load_idx_pair, load_mnist_idx, split, split_indices, synth_frames, Dataset,
    SplitSpec, SynthParams,
};
use crate::error::{Error, Result};
use crate::hash::fnv1a64;
use crate::nn::{Family, SizeConfig, TrainConfig};
use crate::quant::{MAX_BITS, MIN_BITS};

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "QBNET_DATA_DIR";
/// Largest bit width a sweep may request.
pub const SWEEP_MAX_BITS: u32 = 8;

/// `$QBNET_DATA_DIR`, or `./data` when unset.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// IDX files in `<data dir>/mnist`.
    Mnist,
    /// Binary batches in `<data dir>/cifar-10-batches-bin`.
    Cifar10,
    /// Generated in memory from `[data.synth]`.
    Synth,
    /// Files written by `qbnet synth` in `dir`.
    Idx,
}

/// File names used by the `idx` data source.
pub const IDX_TRAIN_FEATURES: &str = "train-features.idx";
pub const IDX_TRAIN_LABELS: &str = "train-labels.idx";
pub const IDX_TEST_FEATURES: &str = "test-features.idx";
pub const IDX_TEST_LABELS: &str = "test-labels.idx";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Overrides the directory derived from the default data directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub train_count: usize,
    pub valid_count: usize,
    /// Use only the first `test_count` test samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_count: Option<usize>,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthParams>,
}

/// Train, validation and test sets resolved from a [`DataConfig`].
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

impl DataConfig {
    fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_count: self.train_count,
            valid_count: self.valid_count,
            seed: self.split_seed,
        }
    }

    pub fn directory(&self, data_dir: &Path) -> PathBuf {
        if let Some(d) = &self.dir {
            return d.clone();
        }
        match self.source {
            DataSource::Mnist => data_dir.join("mnist"),
            DataSource::Cifar10 => data_dir.join("cifar-10-batches-bin"),
            DataSource::Synth | DataSource::Idx => data_dir.to_path_buf(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.source == DataSource::Synth && self.synth.is_none() {
            return Err(Error::Config("source = \"synth\" needs a [data.synth] section".into()));
        }
        if self.source != DataSource::Synth && self.synth.is_some() {
            return Err(Error::Config("[data.synth] is only valid with source = \"synth\"".into()));
        }
        if self.test_count == Some(0) {
            return Err(Error::Config("test_count must be positive".into()));
        }
        Ok(())
    }

    /// Loads the source and applies the split. For the synthetic source
    /// the samples left over after the train/valid split form the test set.
    pub fn load(&self, data_dir: &Path) -> Result<Splits> {
        self.validate()?;
        let dir = self.directory(data_dir);
        let (pool, test) = match self.source {
            DataSource::Mnist => load_mnist_idx(&dir)?,
            DataSource::Cifar10 => load_cifar10(&dir)?,
            DataSource::Idx => (
                load_idx_pair(
                    "idx-train",
                    &dir.join(IDX_TRAIN_FEATURES),
                    &dir.join(IDX_TRAIN_LABELS),
                    None,
                )?,
                load_idx_pair(
                    "idx-test",
                    &dir.join(IDX_TEST_FEATURES),
                    &dir.join(IDX_TEST_LABELS),
                    None,
                )?,
            ),
            DataSource::Synth => {
                let all = synth_frames(self.synth.as_ref().expect("validated"))?;
                let (tr, va) = split_indices(all.len(), &self.split_spec())?;
                let used: std::collections::HashSet<usize> = tr.iter().chain(&va).copied().collect();
                let rest: Vec<usize> = (0..all.len()).filter(|i| !used.contains(i)).collect();
                if rest.is_empty() {
                    return Err(Error::Config(
                        "synthetic source leaves no samples for the test set".into(),
                    ));
                }
                return Ok(Splits {
                    train: all.subset(&tr, "synth-train")?,
                    valid: all.subset(&va, "synth-valid")?,
                    test: self.trim_test(all.subset(&rest, "synth-test")?)?,
                });
            }
        };
        // Pool and test may disagree on class count when inferred from labels.
        let classes = pool.num_classes().max(test.num_classes());
        let pool = Dataset::new(pool.name(), pool.features().clone(), pool.labels().to_vec(), classes)?;
        let test = Dataset::new(test.name(), test.features().clone(), test.labels().to_vec(), classes)?;
        let (train, valid) = split(&pool, &self.split_spec())?;
        Ok(Splits {
            train,
            valid,
            test: self.trim_test(test)?,
        })
    }

    fn trim_test(&self, test: Dataset) -> Result<Dataset> {
        match self.test_count {
            Some(n) => test.take(n),
            None => Ok(test),
        }
    }

    /// Canonical text identifying the data this config selects. The
    /// directory is a location, not content, and is left out.
    pub fn canonical(&self) -> String {
        let mut s = format!(
            "source={};train={};valid={};test={};split_seed={}",
            serde_plain(&self.source),
            self.train_count,
            self.valid_count,
            self.test_count.map_or("all".to_string(), |n| n.to_string()),
            self.split_seed
        );
        if let Some(p) = &self.synth {
            s.push_str(&format!(
                ";synth=samples:{},features:{},classes:{},separation:{:?},seed:{}",
                p.samples, p.features, p.classes, p.separation, p.seed
            ));
        }
        s
    }
}

fn serde_plain(source: &DataSource) -> &'static str {
    match source {
        DataSource::Mnist => "mnist",
        DataSource::Cifar10 => "cifar10",
        DataSource::Synth => "synth",
        DataSource::Idx => "idx",
    }
}

pub(crate) fn canonical_train(cfg: &TrainConfig) -> String {
    format!(
        "lr:{:?},batch:{},epochs:{},patience:{},decay:{:?}",
        cfg.learning_rate, cfg.batch_size, cfg.max_epochs, cfg.early_stop_patience, cfg.lr_decay
    )
}

fn default_jobs() -> usize {
    1
}

fn default_true() -> bool {
    true
}

/// One network: the config read by `train`, `quantize` and `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    /// Size label such as `"256"` or `"32-32-64"`.
    pub size: String,
    /// Initialization and shuffling seed.
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Schedule for quantized retraining; defaults to `train`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrain: Option<TrainConfig>,
}

impl ModelConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.size_config()?;
        self.train.validate()?;
        self.retrain_config().validate()?;
        self.data.validate()
    }

    pub fn size_config(&self) -> Result<SizeConfig> {
        SizeConfig::parse(self.family, &self.size)
    }

    pub fn retrain_config(&self) -> &TrainConfig {
        self.retrain.as_ref().unwrap_or(&self.train)
    }
}

/// A grid of (size × precision × method × seed) cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub family: Family,
    /// Size labels such as `"256"` or `"32-32-64"`.
    pub sizes: Vec<String>,
    pub bit_widths: Vec<u32>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    pub train: TrainConfig,
    /// Schedule for quantized retraining; defaults to `train`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrain: Option<TrainConfig>,
    /// Maximum number of (size, seed) groups processed concurrently.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    /// When false, `wall_seconds` is written as 0 so results files are
    /// byte-reproducible.
    #[serde(default = "default_true")]
    pub record_wall_time: bool,
}

/// One cell of the sweep grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub size: SizeConfig,
    pub bits: Precision,
    pub method: Method,
    pub seed: u64,
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SweepConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn retrain_config(&self) -> &TrainConfig {
        self.retrain.as_ref().unwrap_or(&self.train)
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |what: &str| Error::Config(format!("`{what}` must not be empty"));
        if self.sizes.is_empty() {
            return Err(empty("sizes"));
        }
        if self.methods.is_empty() {
            return Err(empty("methods"));
        }
        if self.seeds.is_empty() {
            return Err(empty("seeds"));
        }
        let quantized = self.methods.iter().any(|m| *m != Method::Float);
        if quantized && self.bit_widths.is_empty() {
            return Err(empty("bit_widths"));
        }
        if let Some(b) = self
            .bit_widths
            .iter()
            .find(|b| !(MIN_BITS..=SWEEP_MAX_BITS.min(MAX_BITS)).contains(*b))
        {
            return Err(Error::Config(format!(
                "bit width {b} outside [{MIN_BITS}, {SWEEP_MAX_BITS}]"
            )));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be positive".into()));
        }
        self.size_configs()?;
        self.train.validate()?;
        self.retrain_config().validate()?;
        self.data.validate()
    }

    pub fn size_configs(&self) -> Result<Vec<SizeConfig>> {
        self.sizes
            .iter()
            .map(|s| SizeConfig::parse(self.family, s))
            .collect()
    }

    /// Cells of one (size, seed) group in execution order: the float cell,
    /// then for each bit width the direct and retrain cells.
    pub fn group_cells(&self, size: SizeConfig, seed: u64) -> Vec<Cell> {
        let mut cells = Vec::new();
        if self.methods.contains(&Method::Float) {
            cells.push(Cell {
                size,
                bits: Precision::Float32,
                method: Method::Float,
                seed,
            });
        }
        for &b in &self.bit_widths {
            for m in [Method::Direct, Method::Retrain] {
                if self.methods.contains(&m) {
                    cells.push(Cell {
                        size,
                        bits: Precision::Bits(b),
                        method: m,
                        seed,
                    });
                }
            }
        }
        cells
    }

    /// Every cell of the grid.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let mut out = Vec::new();
        for size in self.size_configs()? {
            for &seed in &self.seeds {
                out.extend(self.group_cells(size, seed));
            }
        }
        Ok(out)
    }

    /// Canonical text of a cell's full configuration.
    pub fn canonical_cell(&self, cell: &Cell) -> String {
        let mut s = format!(
            "family={};size={};bits={};method={};seed={};data=[{}];train=[{}]",
            self.family,
            cell.size.label(),
            cell.bits,
            cell.method,
            cell.seed,
            self.data.canonical(),
            canonical_train(&self.train),
        );
        if cell.method == Method::Retrain {
            s.push_str(&format!(";retrain=[{}]", canonical_train(self.retrain_config())));
        }
        s
    }

    /// FNV-1a of [`Self::canonical_cell`].
    pub fn cell_hash(&self, cell: &Cell) -> u64 {
        fnv1a64(self.canonical_cell(cell).as_bytes())
    }
}
