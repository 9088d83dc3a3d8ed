//! Command-line front end for training, quantizing, evaluating, sweeping
//! and compression analysis.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use qbnet::checkpoint::{Checkpoint, QuantizedModel};
use qbnet::data::{synth_frames, write_idx_f32, write_idx_labels, SynthParams};
use qbnet::ecr::{
    build_ecr_report, curve_tsv, ecr_tsv, fit_curves, size_sweep_tsv, write_ecr_csv, ParamCounter,
    ParamModel,
};
use qbnet::nn::{evaluate, train};
use qbnet::quant::{direct_quantize, retrain};
use qbnet::sweep::{
    default_data_dir, read_records, run_sweep_limited, Method, ModelConfig, SweepConfig, DATA_DIR_ENV,
    IDX_TEST_FEATURES, IDX_TEST_LABELS, IDX_TRAIN_FEATURES, IDX_TRAIN_LABELS,
};
use qbnet::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "qbnet", version, about = "Fixed-point neural network experiments")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Directory holding the datasets.
    #[arg(long, env = DATA_DIR_ENV, global = true)]
    data_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a float network and save its checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Quantize a checkpoint's float weights.
    Quantize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bits: u32,
        #[arg(long, value_enum)]
        method: QuantMethod,
        /// Model config; required for retraining.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Print the classification error of a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
    },
    /// Run a sweep config, appending to (and resuming from) a results CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        /// Override the config's `jobs`.
        #[arg(long)]
        jobs: Option<usize>,
        /// Stop after this many new cells; rerun to resume.
        #[arg(long)]
        max_cells: Option<usize>,
    },
    /// Compression analysis of a results CSV.
    Ecr(EcrArgs),
    /// Write a synthetic frame-classification dataset as IDX files.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum QuantMethod {
    Direct,
    Retrain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitName {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelKindArg {
    Exact,
    SquareApprox,
}

#[derive(Debug, Args)]
struct EcrArgs {
    #[arg(long)]
    results: PathBuf,
    /// Directory for ecr.csv and the plot TSVs.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelKindArg::SquareApprox)]
    param_model: ModelKindArg,
    /// Quantization method whose curves are compared with the float curve.
    #[arg(long, value_enum, default_value_t = CurveMethod::Retrain)]
    method: CurveMethod,
    /// Reference layer sizes; defaults to the float curve's sizes.
    #[arg(long, value_delimiter = ',')]
    reference_sizes: Vec<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CurveMethod {
    Direct,
    Retrain,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// Training-pool samples.
    #[arg(long)]
    samples: usize,
    #[arg(long)]
    test_samples: usize,
    #[arg(long, default_value_t = 1353)]
    features: usize,
    #[arg(long, default_value_t = 61)]
    classes: usize,
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to standard error as one line.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return EXIT_OK;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("usage error"));
            return EXIT_USAGE;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
    let data_dir = cli.data_dir.clone().unwrap_or_else(default_data_dir);
    match execute(cli.command, &data_dir) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

/// Exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn execute(command: Command, data_dir: &Path) -> Result<()> {
    match command {
        Command::Train { config, output } => {
            let cfg = ModelConfig::load(&config)?;
            let splits = cfg.data.load(data_dir)?;
            let net = cfg.size_config()?.build::<f32>(
                splits.train.sample_shape(),
                splits.train.num_classes(),
                cfg.seed,
            )?;
            info!("training {} {} ({} parameters)", cfg.family, cfg.size, net.count_parameters());
            let (best, history) = train(net, &splits.train, &splits.valid, &cfg.train)?;
            info!("validation history {history:?}");
            Checkpoint::Float(best).save(&output)?;
        }
        Command::Quantize {
            checkpoint,
            bits,
            method,
            config,
            output,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let float = ckpt.master();
            let model = match method {
                QuantMethod::Direct => {
                    let (_, spec) = direct_quantize(float, bits)?;
                    QuantizedModel::new(float.clone(), spec)?
                }
                QuantMethod::Retrain => {
                    let path = config.ok_or_else(|| {
                        Error::InvalidArgument("--method retrain needs --config".into())
                    })?;
                    let cfg = ModelConfig::load(&path)?;
                    let splits = cfg.data.load(data_dir)?;
                    let r = retrain(float, bits, &splits.train, &splits.valid, cfg.retrain_config())?;
                    QuantizedModel::new(r.master, r.spec)?
                }
            };
            Checkpoint::Quantized(model).save(&output)?;
        }
        Command::Eval {
            checkpoint,
            config,
            split,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = ModelConfig::load(&config)?;
            let splits = cfg.data.load(data_dir)?;
            let set = match split {
                SplitName::Train => &splits.train,
                SplitName::Valid => &splits.valid,
                SplitName::Test => &splits.test,
            };
            println!("{}", evaluate(ckpt.network(), set)?);
        }
        Command::Sweep {
            config,
            output,
            jobs,
            max_cells,
        } => {
            let mut cfg = SweepConfig::load(&config)?;
            if let Some(j) = jobs {
                cfg.jobs = j;
            }
            let outcome = run_sweep_limited(&cfg, &output, data_dir, max_cells)?;
            info!(
                "{} records ({} new, {} float trainings)",
                outcome.records.len(),
                outcome.new_cells,
                outcome.float_trainings
            );
        }
        Command::Ecr(args) => run_ecr(&args)?,
        Command::Synth(args) => run_synth(&args)?,
    }
    Ok(())
}

fn run_ecr(args: &EcrArgs) -> Result<()> {
    let records = read_records(&args.results)?;
    if records.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no records", args.results.display())));
    }
    let family = records[0].family;
    if records.iter().any(|r| r.family != family) {
        return Err(Error::InvalidArgument("results mix network families".into()));
    }
    let method = match args.method {
        CurveMethod::Direct => Method::Direct,
        CurveMethod::Retrain => Method::Retrain,
    };
    let model = match args.param_model {
        ModelKindArg::Exact => ParamModel::Exact(ParamCounter::from_records(&records)?),
        ModelKindArg::SquareApprox => ParamModel::SquareApprox,
    };
    let curves = fit_curves(&records, method)?;
    let refs = if args.reference_sizes.is_empty() {
        curves.float.sizes().to_vec()
    } else {
        args.reference_sizes.clone()
    };
    let reports = build_ecr_report(&curves, &refs, &model)?;
    let dir = &args.out_dir;
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    write_ecr_csv(&reports, &dir.join("ecr.csv"))?;
    write_text(&dir.join("size_sweep.tsv"), &size_sweep_tsv(&records)?)?;
    write_text(&dir.join("curves.tsv"), &curve_tsv(&curves))?;
    write_text(&dir.join("ecr_curves.tsv"), &ecr_tsv(&reports))?;
    info!("wrote {} reports to {}", reports.len(), dir.display());
    Ok(())
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let params = SynthParams {
        samples: args.samples + args.test_samples,
        features: args.features,
        classes: args.classes,
        separation: args.separation,
        seed: args.seed,
    };
    if args.samples == 0 || args.test_samples == 0 {
        return Err(Error::InvalidArgument("sample counts must be positive".into()));
    }
    let all = synth_frames(&params)?;
    let train_idx: Vec<usize> = (0..args.samples).collect();
    let test_idx: Vec<usize> = (args.samples..all.len()).collect();
    let train_set = all.subset(&train_idx, "synth-train")?;
    let test_set = all.subset(&test_idx, "synth-test")?;
    let dir = &args.out_dir;
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    write_idx_f32(&dir.join(IDX_TRAIN_FEATURES), &train_set)?;
    write_idx_labels(&dir.join(IDX_TRAIN_LABELS), &train_set)?;
    write_idx_f32(&dir.join(IDX_TEST_FEATURES), &test_set)?;
    write_idx_labels(&dir.join(IDX_TEST_LABELS), &test_set)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
