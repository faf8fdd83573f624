//! Regression and control experiments.

mod fit;
mod lq;
mod targets;

pub use fit::{
    center_edge_ratio, error_profile, fit, mse, mse_fit, mse_step, CenterEdgeRatio, FitConfig, FitReport, FitRow,
    Sample, Sampler, UniformTarget,
};
pub use lq::{lq_cost, lq_cost_sample, lq_fit, riccati, GridError, LqProblem, LqReport, LqSampler, Riccati};
pub use targets::{appendix, kms_matrix, partial, quadratic_kink, wrong_convexity};
