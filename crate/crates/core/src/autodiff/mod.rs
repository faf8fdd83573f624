//! Reverse-mode differentiation over dense arrays.

mod adam;
mod params;
mod spline;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use params::{Binding, ParamId, ParamStore, Parameter};
pub use spline::{hermite_basis, SplineBasis, SplineOutput};
pub use tape::{sigmoid, softplus, Adjoints, BinaryKind, Extremum, Tape, UnaryKind, Var};
pub use tensor::Tensor;

pub(crate) use spline::locate;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TapeError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown operation kind `{0}`")]
    UnknownOp(String),
    #[error("operation `{0}` does not take {1} operand(s)")]
    Arity(String, usize),
    #[error("no node with handle {0} on this tape")]
    InvalidHandle(usize),
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
}
