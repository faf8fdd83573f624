//! Optimal transport between a source and a target law with convex
//! potentials.

mod benchmarks;
mod linear;
mod marginal;
mod minimax;
mod uvp;

pub use benchmarks::{product_gradient, product_potential, tensorized_component, tensorized_map, Benchmark, TransportProblem};
pub use linear::{jacobi_eigen, sqrtm_psd, LinearMap};
pub use marginal::{gaussian_kde, marginal_report, scott_bandwidth, Marginal};
pub use minimax::{
    build_potentials, identity_pretrain, inner_step, linear_baseline, map_slice, map_uvp, minimax_train, outer_step, potential_domains,
    transport, MinimaxConfig, MinimaxReport, OtRow, PotentialSpec,
};
pub use uvp::{total_variance, uvp};
