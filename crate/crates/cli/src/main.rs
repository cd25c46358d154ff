//! `moccnn`: generate synthetic crowds, train and evaluate counting models,
//! inspect the gating network and audit gradients.

mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

/// Exit status of a run. The numeric values are a stable contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    CheckFailed = 1,
    Usage = 2,
    Diverged = 3,
}

#[derive(Parser, Debug)]
#[command(name = "moccnn", about = "Mixture of counting CNNs")]
struct Cli {
    /// Caps the number of worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes a synthetic dataset: PGM images, dot annotations and a manifest.
    Generate(GenerateArgs),
    /// Trains a mixture of counting CNNs.
    Train(TrainArgs),
    /// Trains one of the baselines (ordinary CNN or fc-layer gating).
    TrainBaseline(BaselineArgs),
    /// Scores a checkpoint on a dataset, or cross-validates its configuration.
    Eval(EvalArgs),
    /// Writes per-image gate distributions of a mixture checkpoint.
    InspectGating(InspectArgs),
    /// Runs the finite-difference gradient audit.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// `modes3` or a file with one `name rmin rmax nmin nmax [weight]` line per mode.
    #[arg(long, default_value = "modes3")]
    pub modes: String,
    #[arg(long)]
    pub scenes: usize,
    /// Scene size as HEIGHTxWIDTH.
    #[arg(long, default_value = "144x144")]
    pub size: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Training flags shared by `train` and `train-baseline`. Unset flags fall
/// back to the `--arch` file, then to built-in defaults.
#[derive(Args, Debug, Default)]
pub struct TrainFlags {
    /// Dataset manifest, or a directory containing `manifest.txt`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `key=value` file overriding the architecture and optimizer defaults.
    #[arg(long)]
    pub arch: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Random crops per training scene.
    #[arg(long)]
    pub crops: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `f32` or `f64`.
    #[arg(long)]
    pub precision: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    /// `ordinary` or `fc-gating`.
    #[arg(long)]
    pub variant: String,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Cross-validates the checkpoint's configuration over this many folds
    /// instead of scoring its weights.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Fold assignment seed (default: the checkpoint's seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Clamps negative patch counts to zero before summing.
    #[arg(long)]
    pub clamp: bool,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    /// Adds the mixture-gradient identities and the gating chain.
    #[arg(long)]
    pub full: bool,
}

fn version() -> String {
    format!(
        "{} (checkpoint format {})",
        env!("CARGO_PKG_VERSION"),
        moc_core::train::FORMAT_VERSION
    )
}

fn main() -> ExitCode {
    let matches = Cli::command().version(version()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(Status::Usage as u8);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot size the thread pool: {e}");
            return ExitCode::from(Status::Usage as u8);
        }
    }
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a.flags, None),
        Command::TrainBaseline(a) => commands::train(&a.flags, Some(&a.variant)),
        Command::Eval(a) => commands::eval(&a),
        Command::InspectGating(a) => commands::inspect_gating(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    };
    let status = match result {
        Ok(status) => status,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                moc_core::Error::Diverged { .. } => Status::Diverged,
                moc_core::Error::OracleInvalid { .. } => Status::CheckFailed,
                _ => Status::Usage,
            }
        }
    };
    ExitCode::from(status as u8)
}
