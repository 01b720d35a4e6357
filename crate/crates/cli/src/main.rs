//! `noma-beam`: generate labelled NOMA channel datasets, train the beam
//! direction networks, and evaluate or time them against the exact solver.
//!
//! Machine-readable results go to standard output as one JSON object per
//! command; logs go to standard error. Exit status: 0 success, 2 usage,
//! 3 systemic solver failure, 4 data/model mismatch.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::FileConfig;
use crate::exit::CliError;

#[derive(Debug, Parser)]
#[command(name = "noma-beam", version, about = "Minimum-power NOMA beamforming: solver labels, CNN predictors, evaluation")]
struct Cli {
    /// TOML file of defaults (keys as the long flag names); flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-sample stages (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More log output on standard error (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw Rayleigh channels and label them with the exact solver.
    GenData(GenDataArgs),
    /// Train a network on a labelled dataset.
    Train(TrainArgs),
    /// Mean transmit power per method over an SINR grid.
    Eval(EvalArgs),
    /// Per-instance time of the solver and of each network.
    Bench(BenchArgs),
    /// Directions, powers and SINRs from one network for each channel in a file.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub tol_gap: Option<f64>,
    #[arg(long)]
    pub tol_feas: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Transmit antennas [default: 4]
    #[arg(long)]
    pub n: Option<usize>,
    /// Users [default: 3]
    #[arg(long)]
    pub k: Option<usize>,
    /// Noise variance [default: 0.1]
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// SINR target for every user [default: 5]
    #[arg(long, allow_hyphen_values = true)]
    pub gamma_db: Option<f64>,
    /// Samples [default: 20000]
    #[arg(long)]
    pub count: Option<usize>,
    /// Base seed (required here or in the config file)
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// tcnn or fcnn [default: fcnn]
    #[arg(long)]
    pub encoding: Option<String>,
    /// [default: 100]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size [default: 200]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Initial learning rate [default: 0.01]
    #[arg(long)]
    pub lr: Option<f64>,
    /// First epoch (0-based) at the reduced rate [default: 50]
    #[arg(long)]
    pub lr_drop_epoch: Option<usize>,
    /// Learning-rate reduction factor [default: 0.5]
    #[arg(long)]
    pub lr_factor: Option<f64>,
    /// Share of samples held out for validation [default: 0.2]
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// L2 penalty on weights [default: 0]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Seed for initialization and shuffling (required here or in the config file)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Learning-curve CSV [default: model path with extension .curve.csv]
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Test channels (JSONL).
    #[arg(long)]
    pub test: PathBuf,
    /// Model files, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<PathBuf>,
    /// SINR grid in dB, comma separated [default: 0,2.5,5,7.5,10]
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub gammas: Option<Vec<f64>>,
    /// Methods to compare [default: label, mrc, zf and one per model encoding]
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// exact or nearest: which model serves a grid point [default: nearest]
    #[arg(long)]
    pub model_match: Option<String>,
    #[arg(long, default_value = "power_curve.csv")]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Test channels (JSONL).
    #[arg(long)]
    pub test: PathBuf,
    /// Model files, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<PathBuf>,
    /// Channels timed per method [default: 50]
    #[arg(long)]
    pub instances: Option<usize>,
    /// SINR target [default: 5]
    #[arg(long, allow_hyphen_values = true)]
    pub gamma_db: Option<f64>,
    #[arg(long, default_value = "timing.csv")]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Channels (JSONL with n, k, sigma2, h_re, h_im).
    #[arg(long)]
    pub channel: PathBuf,
    /// SINR target [default: the model's training target]
    #[arg(long, allow_hyphen_values = true)]
    pub gamma_db: Option<f64>,
    /// Report file; without it the JSONL goes to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Some(w) = cli.workers.or(file.workers) {
        if w == 0 {
            return Err(CliError::Usage("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    match cli.command {
        Command::GenData(a) => commands::gen_data(a, &file),
        Command::Train(a) => commands::train(a, &file),
        Command::Eval(a) => commands::eval(a, &file),
        Command::Bench(a) => commands::bench(a, &file),
        Command::Predict(a) => commands::predict(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.code()
        }
    }
}
