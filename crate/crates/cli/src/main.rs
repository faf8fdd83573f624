//! `ickan`: experiment runner for input-convex KANs.

mod config;
mod experiments;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Serialize;

pub type AnyResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

#[derive(Parser, Debug)]
#[command(name = "ickan", version, about = "Input-convex KAN experiments", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Regress the quadratic-plus-kink target.
    #[command(args_override_self = true)]
    Fit(FitArgs),
    /// Fit a non-convex quadratic with a convex network.
    #[command(args_override_self = true)]
    WrongConvexity(WrongArgs),
    /// Fit the value function of a linear-quadratic control problem.
    #[command(args_override_self = true)]
    Lq(LqArgs),
    /// Fit |y+1||x+2x^3| with a network convex in y.
    #[command(args_override_self = true)]
    PickanFit(PickanArgs),
    /// Estimate a transport map with the two-potential minimax scheme.
    #[command(args_override_self = true)]
    Ot(OtArgs),
    /// Single-layer fits of the four one-dimensional test functions.
    #[command(name = "appendix-1d", args_override_self = true)]
    Appendix1d(AppendixArgs),
    /// Check the exact max-of-two-affine construction.
    #[command(args_override_self = true)]
    OracleMaxaffine(OracleArgs),
    /// Run the structural property suite.
    #[command(args_override_self = true)]
    Verify(VerifyArgs),
}

/// Flags shared by every experiment.
#[derive(Args, Debug, Clone, Serialize)]
pub struct Common {
    /// Output directory.
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of independent runs.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    /// Execute the runs on separate threads.
    #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_value = "false", default_missing_value = "true")]
    pub parallel: bool,
    /// File of `key=value` lines overriding the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Network flags. Unset values fall back to the experiment's defaults.
#[derive(Args, Debug, Clone, Serialize)]
pub struct NetArgs {
    /// p1, cubic, icnn or kan.
    #[arg(long)]
    pub family: Option<String>,
    /// Train the grid vertices.
    #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    pub adapt: Option<bool>,
    /// Hidden layers.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Neurons per hidden layer.
    #[arg(long)]
    pub neurons: Option<usize>,
    /// Cells per grid.
    #[arg(long = "P")]
    pub p: Option<usize>,
    /// ICNN activation: relu or celu.
    #[arg(long, default_value = "relu")]
    pub activation: String,
    #[arg(long, default_value_t = 1.0)]
    pub celu_alpha: f64,
}

/// Regression training flags.
#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Validation sample size.
    #[arg(long)]
    pub validation: Option<usize>,
    /// Selection sample size.
    #[arg(long)]
    pub selection: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value_t = 3)]
    pub dim: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct WrongArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// 1 or 2.
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    /// Points per axis of the error profile or grid.
    #[arg(long, default_value_t = 401)]
    pub points: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct LqArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 5)]
    pub horizon: usize,
    /// Points per axis of the relative-error grid.
    #[arg(long, default_value_t = 61)]
    pub per_axis: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PickanArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Number of fixed x values in the convexity-in-y check.
    #[arg(long, default_value_t = 20)]
    pub check_x: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct OtArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub net: NetArgs,
    /// identity, tensorized or product.
    #[arg(long, default_value = "tensorized")]
    pub benchmark: String,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 3000)]
    pub outer: usize,
    #[arg(long, default_value_t = 15)]
    pub inner: usize,
    #[arg(long, default_value_t = 1024)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 4096)]
    pub test_size: usize,
    #[arg(long, default_value_t = 16384)]
    pub validation_size: usize,
    #[arg(long, default_value_t = 2000)]
    pub pretrain_steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub pretrain_lr: f64,
    /// Points per slice of the estimated map.
    #[arg(long, default_value_t = 201)]
    pub slice_points: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct AppendixArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Function index 1 to 4; all four when absent.
    #[arg(long)]
    pub function: Option<usize>,
    #[arg(long, default_value_t = 801)]
    pub points: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct OracleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Grid points per axis; chosen from the dimension when absent.
    #[arg(long)]
    pub per_axis: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also load and check this checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Fit(a) => experiments::fit(&a),
        Command::WrongConvexity(a) => experiments::wrong_convexity(&a),
        Command::Lq(a) => experiments::lq(&a),
        Command::PickanFit(a) => experiments::pickan_fit(&a),
        Command::Ot(a) => experiments::ot(&a),
        Command::Appendix1d(a) => experiments::appendix_1d(&a),
        Command::OracleMaxaffine(a) => experiments::oracle_maxaffine(&a),
        Command::Verify(a) => experiments::verify(&a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
