//! Experiment grids over network size, precision and quantization method
//! with a persistent, resumable results file.

mod config;
mod records;
mod summary;

pub use config::{
    default_data_dir, Cell, DataConfig, DataSource, ModelConfig, Splits, SweepConfig, DATA_DIR_ENV,
    IDX_TEST_FEATURES, IDX_TEST_LABELS, IDX_TRAIN_FEATURES, IDX_TRAIN_LABELS, SWEEP_MAX_BITS,
};
pub use records::{
    format_sig6, read_records, round_sig6, write_records, Method, Precision, RunRecord, HEADER,
};
pub use summary::{summarize, CellSummary, SummaryKey};

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::info;

use crate::checkpoint::{parameter_hash, Checkpoint};
use crate::error::{Error, Result};
use crate::nn::{evaluate, train, Network, SizeConfig};
use crate::quant::{direct_quantize, retrain};

/// What a call to [`run_sweep`] did.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// Records for every cell of the config, sorted by `config_hash`.
    pub records: Vec<RunRecord>,
    /// Cells computed by this call (the rest were already present).
    pub new_cells: usize,
    /// Float networks trained by this call (cache hits excluded).
    pub float_trainings: usize,
    /// False when a cell limit stopped the run early.
    pub complete: bool,
}

/// Directory holding cached float checkpoints for a results file.
pub fn checkpoint_dir(output: &Path) -> PathBuf {
    sidecar(output, "ckpt")
}

/// Tab-separated `config_hash  float_parameter_hash` lines tying each
/// record to the float network it was derived from.
pub fn lineage_path(output: &Path) -> PathBuf {
    sidecar(output, "lineage.tsv")
}

fn sidecar(output: &Path, ext: &str) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(ext);
    output.with_file_name(name)
}

/// Reads a lineage file into a map from config hash to float parameter hash.
pub fn read_lineage(path: &Path) -> Result<BTreeMap<u64, u64>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let complete = text.rfind('\n').map_or("", |i| &text[..=i]);
    let mut out = BTreeMap::new();
    for (i, line) in complete.lines().enumerate() {
        let bad = |m: &str| Error::Record {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            message: m.to_string(),
        };
        let (a, b) = line.split_once('\t').ok_or_else(|| bad("expected two columns"))?;
        let a = u64::from_str_radix(a, 16).map_err(|_| bad("bad config hash"))?;
        let b = u64::from_str_radix(b, 16).map_err(|_| bad("bad parameter hash"))?;
        out.insert(a, b);
    }
    Ok(out)
}

fn write_lineage(path: &Path, lineage: &BTreeMap<u64, u64>) -> Result<()> {
    let text: String = lineage
        .iter()
        .map(|(a, b)| format!("{a:016x}\t{b:016x}\n"))
        .collect();
    atomic_write(path, text.as_bytes())
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = sidecar(path, "tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Prepares the results file for appending and returns the records it
/// already holds. A trailing partial line left by an interrupted write is
/// dropped.
fn open_results(output: &Path) -> Result<Vec<RunRecord>> {
    let text = match fs::read_to_string(output) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(Error::io(output, e)),
    };
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    if complete.is_empty() {
        write_records(&[], output)?;
        return Ok(Vec::new());
    }
    if complete.len() != text.len() {
        info!("dropping incomplete trailing line in {}", output.display());
        atomic_write(output, complete.as_bytes())?;
    }
    records::parse_records(output, complete)
}

struct Shared<'a> {
    cfg: &'a SweepConfig,
    splits: &'a Splits,
    output: &'a Path,
    ckpt_dir: PathBuf,
    done: HashSet<u64>,
    writer: Mutex<Writer>,
    float_trainings: AtomicUsize,
    limit: usize,
}

struct Writer {
    new_records: Vec<RunRecord>,
    lineage_file: fs::File,
}

impl Shared<'_> {
    fn limit_reached(&self) -> bool {
        self.writer.lock().expect("writer lock poisoned").new_records.len() >= self.limit
    }

    fn emit(&self, record: RunRecord, float_hash: u64) -> Result<()> {
        let mut w = self.writer.lock().expect("writer lock poisoned");
        if w.new_records.len() >= self.limit {
            return Ok(());
        }
        records::append_record(self.output, &record)?;
        let lpath = lineage_path(self.output);
        writeln!(w.lineage_file, "{:016x}\t{float_hash:016x}", record.config_hash)
            .and_then(|_| w.lineage_file.sync_data())
            .map_err(|e| Error::io(&lpath, e))?;
        info!(
            "{} {} bits={} {} seed={}: valid {:.4} test {:.4}",
            record.family,
            record.size_label,
            record.bits,
            record.method,
            record.seed,
            record.valid_error,
            record.test_error
        );
        w.new_records.push(record.rounded());
        Ok(())
    }

    fn float_network(&self, size: SizeConfig, seed: u64) -> Result<(Network<f32>, f64)> {
        let path = self.ckpt_dir.join(format!("{}-s{seed}.qbnet", size.label()));
        if path.exists() {
            if let Ok(Checkpoint::Float(net)) = Checkpoint::load(&path) {
                return Ok((net, 0.0));
            }
            info!("ignoring unreadable checkpoint {}", path.display());
        }
        let start = Instant::now();
        let s = self.splits;
        let net = size.build::<f32>(s.train.sample_shape(), s.train.num_classes(), seed)?;
        let (best, _) = train(net, &s.train, &s.valid, &self.cfg.train)?;
        self.float_trainings.fetch_add(1, Ordering::Relaxed);
        let elapsed = start.elapsed().as_secs_f64();
        let ckpt = Checkpoint::Float(best);
        ckpt.save(&path)?;
        match ckpt {
            Checkpoint::Float(net) => Ok((net, elapsed)),
            Checkpoint::Quantized(_) => unreachable!(),
        }
    }

    fn run_group(&self, size: SizeConfig, seed: u64) -> Result<()> {
        let cells = self.cfg.group_cells(size, seed);
        let pending: Vec<&Cell> = cells
            .iter()
            .filter(|c| !self.done.contains(&self.cfg.cell_hash(c)))
            .collect();
        if pending.is_empty() || self.limit_reached() {
            return Ok(());
        }
        let s = self.splits;
        let (float, train_secs) = self.float_network(size, seed)?;
        let float_hash = parameter_hash(&float);
        let size_param_count = float.count_parameters() as u64;
        for cell in pending {
            if self.limit_reached() {
                return Ok(());
            }
            let start = Instant::now();
            let net = match (cell.method, cell.bits) {
                (Method::Float, _) => float.clone(),
                (Method::Direct, Precision::Bits(b)) => direct_quantize(&float, b)?.0,
                (Method::Retrain, Precision::Bits(b)) => {
                    retrain(&float, b, &s.train, &s.valid, self.cfg.retrain_config())?.network
                }
                (m, p) => {
                    return Err(Error::InvalidArgument(format!("invalid cell {m} at {p}")));
                }
            };
            let valid_error = evaluate(&net, &s.valid)?;
            let test_error = evaluate(&net, &s.test)?;
            let mut wall = start.elapsed().as_secs_f64();
            if cell.method == Method::Float {
                wall += train_secs;
            }
            let record = RunRecord {
                config_hash: self.cfg.cell_hash(cell),
                family: self.cfg.family,
                size_label: size.label(),
                size_param_count,
                bits: cell.bits,
                method: cell.method,
                seed,
                valid_error,
                test_error,
                wall_seconds: if self.cfg.record_wall_time { wall } else { 0.0 },
            };
            self.emit(record, float_hash)?;
        }
        Ok(())
    }
}

/// Runs every cell of `cfg` not already present in `output`, appending each
/// record as it completes, then rewrites the file sorted by `config_hash`.
/// Data sources are resolved relative to `data_dir`.
pub fn run_sweep(cfg: &SweepConfig, output: &Path, data_dir: &Path) -> Result<SweepOutcome> {
    run_sweep_limited(cfg, output, data_dir, None)
}

/// [`run_sweep`] that stops after `limit` new cells. A stopped run leaves
/// the results file in append order, exactly as an interrupted process
/// would; a later call resumes it.
pub fn run_sweep_limited(
    cfg: &SweepConfig,
    output: &Path,
    data_dir: &Path,
    limit: Option<usize>,
) -> Result<SweepOutcome> {
    cfg.validate()?;
    let existing = open_results(output)?;
    let done: HashSet<u64> = existing.iter().map(|r| r.config_hash).collect();
    let cells = cfg.cells()?;
    let wanted: HashSet<u64> = cells.iter().map(|c| cfg.cell_hash(c)).collect();
    let missing = wanted.difference(&done).count();

    let mut new_records = Vec::new();
    let mut float_trainings = 0;
    if missing > 0 {
        let splits = cfg.data.load(data_dir)?;
        info!(
            "{missing} of {} cells to run (train {}, valid {}, test {})",
            cells.len(),
            splits.train.len(),
            splits.valid.len(),
            splits.test.len()
        );
        let ckpt_dir = checkpoint_dir(output);
        fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
        let lpath = lineage_path(output);
        if lpath.exists() {
            write_lineage(&lpath, &read_lineage(&lpath)?)?;
        }
        let lineage_file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&lpath)
            .map_err(|e| Error::io(&lpath, e))?;
        let shared = Shared {
            cfg,
            splits: &splits,
            output,
            ckpt_dir,
            done,
            writer: Mutex::new(Writer {
                new_records: Vec::new(),
                lineage_file,
            }),
            float_trainings: AtomicUsize::new(0),
            limit: limit.unwrap_or(usize::MAX),
        };
        let groups: Vec<(SizeConfig, u64)> = cfg
            .size_configs()?
            .into_iter()
            .flat_map(|s| cfg.seeds.iter().map(move |&seed| (s, seed)))
            .collect();
        let next = AtomicUsize::new(0);
        let first_error: Mutex<Option<Error>> = Mutex::new(None);
        let workers = cfg.jobs.min(groups.len()).max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    if first_error.lock().expect("lock").is_some() {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&(size, seed)) = groups.get(i) else { break };
                    if let Err(e) = shared.run_group(size, seed) {
                        first_error.lock().expect("lock").get_or_insert(e);
                        break;
                    }
                });
            }
        });
        if let Some(e) = first_error.into_inner().expect("lock") {
            return Err(e);
        }
        float_trainings = shared.float_trainings.load(Ordering::Relaxed);
        new_records = shared.writer.into_inner().expect("lock").new_records;
    }

    let new_cells = new_records.len();
    let complete = new_cells >= missing;
    let mut all = existing;
    all.extend(new_records);
    all.sort_by_key(|r| r.config_hash);
    all.dedup_by_key(|r| r.config_hash);
    let records: Vec<RunRecord> = all
        .iter()
        .filter(|r| wanted.contains(&r.config_hash))
        .cloned()
        .collect();
    if !complete {
        return Ok(SweepOutcome {
            records,
            new_cells,
            float_trainings,
            complete,
        });
    }
    let mut text = format!("{HEADER}\n");
    for r in &all {
        text.push_str(&r.to_csv_line());
        text.push('\n');
    }
    atomic_write(output, text.as_bytes())?;
    let lpath = lineage_path(output);
    if lpath.exists() {
        write_lineage(&lpath, &read_lineage(&lpath)?)?;
    }

    Ok(SweepOutcome {
        records,
        new_cells,
        float_trainings,
        complete,
    })
}
