//! The `dmrl` command line.
//!
//! Each subcommand resolves its flags into a serializable config, runs, and
//! writes that config next to its artifacts so any output can be replayed.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dmrl_core::gridworld::FeatureMode;
use dmrl_core::reward::KdmrlParams;
use dmrl_core::track::Style;

mod artifact;
mod commands;
pub mod serve;

pub use artifact::sidecar_path;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// Runtime failure, or a verification run that found violations.
    pub const FAILURE: i32 = 1;
    pub const BAD_CONFIG: i32 = 2;
    pub const MALFORMED_INPUT: i32 = 3;
    pub const DIMENSION_MISMATCH: i32 = 4;
    pub const PORT_BUSY: i32 = 5;
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn bad_config(message: impl Into<String>) -> Self {
        Self::new(exit::BAD_CONFIG, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<dmrl_core::Error> for CliError {
    fn from(e: dmrl_core::Error) -> Self {
        use dmrl_core::Error as E;
        let code = match &e {
            E::InvalidInput(_) => exit::BAD_CONFIG,
            E::Malformed { .. } | E::Json(_) => exit::MALFORMED_INPUT,
            E::DimensionMismatch { .. } => exit::DIMENSION_MISMATCH,
            _ => exit::FAILURE,
        };
        Self::new(code, e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "dmrl", version, about = "Density matching reward learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gridworld benchmark: expected value difference per trajectory count.
    Grid(GridArgs),
    /// Fit a driving reward from a trajectory file.
    Learn(LearnArgs),
    /// Drive scenarios with receding-horizon control under a learned reward.
    Drive(DriveArgs),
    /// Record scripted-expert demonstrations.
    Demo(DemoArgs),
    /// Serve the live simulator over a WebSocket for demonstration capture.
    Serve(ServeArgs),
    /// Fuzz the distance bound checkers.
    Verify(VerifyArgs),
}

/// Regularizers and bandwidth of a kernelized fit.
#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long, default_value_t = KdmrlParams::default().lambda)]
    pub lambda: f64,
    #[arg(long, default_value_t = KdmrlParams::default().beta)]
    pub beta: f64,
    /// Leverage decay in (0, 1]; 1 disables leverage.
    #[arg(long, default_value_t = KdmrlParams::default().delta)]
    pub delta: f64,
    /// Multiplier on the median-trick lengthscale [default: per command].
    #[arg(long)]
    pub bandwidth_scale: Option<f64>,
    /// Fixed lengthscale in standardized units, replacing the median trick.
    #[arg(long)]
    pub lengthscale: Option<f64>,
}

impl FitArgs {
    pub fn params(&self, default_scale: f64, seed: u64) -> KdmrlParams {
        KdmrlParams {
            lambda: self.lambda,
            beta: self.beta,
            delta: self.delta,
            lengthscale: self.lengthscale,
            bandwidth_scale: self.bandwidth_scale.unwrap_or(default_scale),
            seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long)]
    pub mode: FeatureMode,
    /// Comma-separated trajectory counts.
    #[arg(long, value_delimiter = ',', default_values_t = [8usize, 16, 32, 64, 128, 256])]
    pub n_traj: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub maps: usize,
    #[arg(long, default_value_t = 5)]
    pub demo_sets: usize,
    #[arg(long, default_value_t = dmrl_core::gridworld::DEFAULT_PEAKS)]
    pub peaks: usize,
    /// Steps per trajectory [default: size / 2].
    #[arg(long)]
    pub traj_len: Option<usize>,
    #[arg(long, default_value_t = dmrl_core::gridworld::DEFAULT_DISCOUNT)]
    pub discount: f64,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Leave fit_ms at 0 so reruns are byte-identical.
    #[arg(long)]
    pub no_timing: bool,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct LearnArgs {
    /// Trajectory file (one JSON record per line).
    #[arg(long)]
    pub demos: PathBuf,
    /// Model JSON destination.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Keep every n-th tick of each episode as an inducing point.
    #[arg(long, default_value_t = 10)]
    pub inducing_stride: usize,
    /// Extra uniform inducing points from the inflated demo bounding box.
    #[arg(long, default_value_t = 0)]
    pub random_inducing: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// `trained`, `transferred`, or a scenario JSON file.
    #[arg(long)]
    pub scenario: String,
    /// Driving style; required for the built-in scenario sets and
    /// overrides the style of a scenario file.
    #[arg(long)]
    pub style: Option<Style>,
    /// Number of episodes [default: the whole built-in set, or 1 for a file].
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Seconds per episode [default: 20 on trained roads, 60 otherwise].
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct DriveArgs {
    /// Reward model JSON.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Reference demonstrations for the histogram distances [default:
    /// scripted expert on the same scenarios].
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Planning depth in 0.6 s segments.
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    /// Output directory for trajectories, metrics and config.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Trajectory file destination.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    /// Scenario JSON file [default: first trained road of the style].
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value = "safe")]
    pub style: Style,
    /// Directory for saved demonstrations.
    #[arg(long, default_value = "demos")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 100_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Shrinks both bounds to zero so that the checkers must report
    /// violations.
    #[arg(long, hide = true)]
    pub inject_violation: bool,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::BAD_CONFIG } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

fn execute(command: Command) -> CliResult<i32> {
    match command {
        Command::Grid(a) => commands::grid(&a),
        Command::Learn(a) => commands::learn(&a),
        Command::Drive(a) => commands::drive(&a),
        Command::Demo(a) => commands::demo(&a),
        Command::Serve(a) => serve::serve(&a),
        Command::Verify(a) => commands::verify(&a),
    }
}
