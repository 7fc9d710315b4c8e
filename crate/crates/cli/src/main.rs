//! `mvop`: fit MVOP imputation models, run two-stage nested multiple
//! imputation, pool estimates, run simulation studies and posterior
//! predictive checks.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mvop_core::MvopError;

#[derive(Parser, Debug)]
#[command(name = "mvop", version, about = "Multivariate ordinal probit multiple imputation")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "MVOP_JOBS")]
    jobs: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit an MVOP model by data augmentation or Monte Carlo EM.
    Fit(FitArgs),
    /// Stage 1: impute the missing target instrument K times.
    Equate(EquateArgs),
    /// Stage 2: impute the target at a later date L times per Stage-1 dataset.
    Translate(TranslateArgs),
    /// Combine estimates over a stack of completed datasets.
    Pool(PoolArgs),
    /// Run the simulation study on a grid.
    Simulate(SimulateArgs),
    /// Posterior predictive checks of a DA fit.
    Ppc(PpcArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Da,
    Mcem,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Threshold,
    Correlation,
}

#[derive(Args, Debug)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the configuration file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Schema sidecar; defaults to `<data>.schema.json` when present.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "da")]
    pub engine: EngineArg,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Also write the binary posterior trace.
    #[arg(long)]
    pub trace: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct EquateArgs {
    /// Fully observed anchor instrument.
    #[arg(long)]
    pub anchor: PathBuf,
    /// Target instrument, missing row-wise.
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "da")]
    pub engine: EngineArg,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum TranslateModel {
    /// Joint MVOP model of all items.
    Mvop,
    /// Linear regression of target totals on other-instrument totals.
    Regression,
}

#[derive(Args, Debug)]
pub struct TranslateArgs {
    /// Stack directory written by `equate`.
    #[arg(long)]
    pub stage1: PathBuf,
    /// Other instrument observed at the first date for every unit.
    #[arg(long)]
    pub other: PathBuf,
    /// Later-date target and other items; target cells may be missing.
    #[arg(long)]
    pub later: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub l: usize,
    #[arg(long, value_enum, default_value = "mvop")]
    pub model: TranslateModel,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct PoolArgs {
    /// Stack directory; for `--change` the later-date stack.
    #[arg(long)]
    pub stack: PathBuf,
    /// Items entering the total score (default: all items of the stack).
    #[arg(long, value_delimiter = ',')]
    pub items: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Estimate group differences in change between dates.
    #[arg(long, requires_all = ["admission", "group"])]
    pub change: bool,
    /// Stage-1 stack holding first-date target items (with `--change`).
    #[arg(long)]
    pub admission: Option<PathBuf>,
    /// Binary covariate defining the first comparison group (with `--change`).
    #[arg(long)]
    pub group: Option<String>,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Grid configuration (TOML); presets apply when omitted.
    #[arg(long, conflicts_with_all = ["desk", "full"])]
    pub grid: Option<PathBuf>,
    /// Desk-scale preset (R = 200).
    #[arg(long, conflicts_with = "full")]
    pub desk: bool,
    /// Full protocol preset (R = 1000).
    #[arg(long)]
    pub full: bool,
    /// Override the replicate count.
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PpcArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Number of retained posterior draws S (at least 100).
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Also write the per-draw (T_D, T_R) pairs.
    #[arg(long)]
    pub dump_pairs: bool,
    #[command(flatten)]
    pub common: Common,
}

fn exit_code(e: &MvopError) -> u8 {
    match e {
        MvopError::Numerical(_) | MvopError::Estimation(_) => 3,
        MvopError::Convergence { .. } => 4,
        _ => 2,
    }
}

fn kind(e: &MvopError) -> &'static str {
    match e {
        MvopError::Domain(_) => "domain",
        MvopError::Validation(_) => "validation",
        MvopError::Numerical(_) => "numerical",
        MvopError::Estimation(_) => "estimation",
        MvopError::Convergence { .. } => "convergence",
        MvopError::Io(_) => "io",
        MvopError::Csv(_) => "csv",
        MvopError::Json(_) => "json",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let result = match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Equate(a) => commands::equate(a),
        Command::Translate(a) => commands::translate(a),
        Command::Pool(a) => commands::pool(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Ppc(a) => commands::ppc(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let record = serde_json::json!({ "error": kind(&e), "message": e.to_string(), "exit_code": code });
            eprintln!("{record}");
            ExitCode::from(code)
        }
    }
}
