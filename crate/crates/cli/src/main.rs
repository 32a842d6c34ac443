//! `ipassr`: stereo super-resolution runs, synthetic-scene demos, metric
//! tables, and a built-in self-test.
//!
//! Exit codes: 0 on success, 1 when a run fails mid-compute, 2 when the
//! inputs are rejected up front. All stdout reports are UTF-8 with one
//! record per line and `key=value` fields.

mod eval;
mod render;
mod selftest;
mod sr;
mod toy;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Failures split by exit code: rejected inputs (2) vs errors mid-run (1).
#[derive(Debug)]
pub enum AppError {
    Validation(String),
    Runtime(String),
}

pub type AppResult<T> = Result<T, AppError>;

impl From<ipassr_core::error::Error> for AppError {
    fn from(e: ipassr_core::error::Error) -> Self {
        AppError::Runtime(e.to_string())
    }
}

/// Wraps a failure from the input-checking phase (exit code 2).
pub fn invalid(msg: impl Into<String>) -> AppError {
    AppError::Validation(msg.into())
}

#[derive(Parser)]
#[command(
    name = "ipassr",
    version,
    about = "Stereo image super-resolution with parallax attention"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Super-resolve a rectified stereo pair; writes SR images, valid
    /// masks, and an attention profile.
    Sr(SrArgs),
    /// Like `sr`, but writes only the valid masks and the attention profile.
    Masks(SrArgs),
    /// Render a synthetic stereo scene and run the analytic attention,
    /// occlusion, and loss pipeline over it.
    Toy(ToyArgs),
    /// Compare super-resolved outputs against ground truth, paired by stem.
    Eval(EvalArgs),
    /// Run the built-in oracle and invariant suite.
    Selftest,
}

#[derive(Args)]
pub struct SrArgs {
    /// Left input view (PNG).
    pub left: PathBuf,
    /// Right input view (PNG).
    pub right: PathBuf,
    /// Upscaling factor (2 or 4).
    #[arg(long)]
    pub scale: u32,
    /// Weight archive; when omitted, a seeded random demo archive is used.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Seed for the demo archive when --weights is absent.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct ToyArgs {
    /// Scene description file; when omitted, the built-in demo scene runs.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Directory of super-resolved views named `<stem>_L.png` / `<stem>_R.png`.
    pub sr_dir: PathBuf,
    /// Directory of ground-truth views with matching names.
    pub gt_dir: PathBuf,
    /// Metric protocol: cropped-left or stereo-average.
    #[arg(long, default_value = "cropped-left")]
    pub protocol: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Sr(args) => sr::run(&args, true),
        Command::Masks(args) => sr::run(&args, false),
        Command::Toy(args) => toy::run(&args),
        Command::Eval(args) => eval::run(&args),
        Command::Selftest => selftest::run(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
        Err(AppError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
