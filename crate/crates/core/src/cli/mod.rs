//! The `trafficgan` command line.

mod commands;
pub mod config;
pub mod provenance;

use std::ffi::OsString;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "trafficgan", version, about = "Simulate, train, estimate and evaluate GAN traffic state estimators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (TOML). Omitted sections use defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the command's primary seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file or directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with the cell transmission model.
    Simulate(SimulateArgs),
    /// Train the GAN on a corpus and write a checkpoint.
    Train(TrainArgs),
    /// Reconstruct one partially observed matrix.
    Estimate(EstimateArgs),
    /// Score the full estimator and the baselines on a corpus.
    Evaluate(EvaluateArgs),
    /// Compare the four loss variants on a corpus.
    Ablate(AblateArgs),
    /// Verify every analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of records (overrides `corpus.records`).
    #[arg(long)]
    pub records: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Corpus directory (defaults to `paths.corpus`).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Epochs to run (overrides `gan.epochs`).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Per-epoch history CSV (default: `<out>.history.csv`).
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// `decimal` or `f64le`.
    #[arg(long, default_value = "decimal")]
    pub encoding: String,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Matrix CSV; entries marked missing by the mask are ignored.
    #[arg(long)]
    pub input: PathBuf,
    /// Mask CSV of 0/1 values, one row per time step, one column per feature.
    #[arg(long, conflicts_with_all = ["mask_rate", "future_block"])]
    pub mask: Option<PathBuf>,
    /// Hide this fraction of entries at random.
    #[arg(long, conflicts_with = "future_block")]
    pub mask_rate: Option<f64>,
    /// Hide every row from this 0-based index on (prediction).
    #[arg(long)]
    pub future_block: Option<usize>,
    #[arg(long)]
    pub lambda_p: Option<f64>,
    #[arg(long)]
    pub lambda_c: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Directory for per-record plot-data CSVs.
    #[arg(long)]
    pub plots: Option<PathBuf>,
    #[arg(long)]
    pub plot_records: Option<usize>,
    #[arg(long)]
    pub max_records: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Estimation seeds, comma separated (overrides `ablation.seeds`).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub max_records: Option<usize>,
    /// Fail unless the full variant has the lowest and the bare variant the
    /// highest median MSE for both targets.
    #[arg(long)]
    pub assert_ordering: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8])]
    pub hidden: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 3])]
    pub input: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 5, 10])]
    pub steps: Vec<usize>,
    /// LSTM instances per dimension combination.
    #[arg(long, default_value_t = 4)]
    pub repeats: usize,
    /// Generator, discriminator and latent-gradient instances.
    #[arg(long, default_value_t = 20)]
    pub composed: usize,
    /// Perturb one analytic gradient entry; the check must then fail.
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    }
}

/// Refuses to clobber an existing file unless `force` is set.
pub(crate) fn check_writable(path: &Path, force: bool) -> Result<()> {
    if !force && path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(ErrorKind::AlreadyExists, "output exists (pass --force to overwrite)"),
        ));
    }
    Ok(())
}

pub(crate) fn write_output(path: &Path, bytes: &[u8], force: bool) -> Result<()> {
    check_writable(path, force)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
