//! Input-convex Kolmogorov-Arnold networks.
//!
//! The crate contains a small reverse-mode tape ([`autodiff`]), lattices and
//! boxes ([`grid`]), convex piecewise-linear and cubic-Hermite layers
//! ([`layers`]), the network families built from them ([`networks`]), and
//! the regression, control and optimal-transport harnesses ([`training`],
//! [`transport`]).

pub mod autodiff;
pub mod grid;
pub mod layers;
pub mod networks;
pub mod rng;
pub mod training;
pub mod transport;
pub mod verify;

pub use autodiff::TapeError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("input {value} in coordinate {coord} lies outside [{lo}, {hi}] and extrapolation is disabled")]
    OutsideDomain { coord: usize, value: f64, lo: f64, hi: f64 },
    #[error("invalid model: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("empty sample")]
    EmptySample,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
