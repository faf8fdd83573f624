//! Synthetic transport problems with a known map.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Benchmark {
    /// `T = id`, so source and target coincide.
    Identity,
    /// `T_i(x) = x_i + 1 / (6 - cos(2 pi x_i)) - 0.2`
    Tensorized,
    /// `T = grad f` with `f(x) = 3^-d prod_i (x_i^2 + x_i + 1)`
    Product,
}

impl std::str::FromStr for Benchmark {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Benchmark::Identity),
            "tensorized" => Ok(Benchmark::Tensorized),
            "product" => Ok(Benchmark::Product),
            other => Err(Error::InvalidConfig(format!("unknown benchmark `{other}`"))),
        }
    }
}

impl std::fmt::Display for Benchmark {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Benchmark::Identity => "identity",
            Benchmark::Tensorized => "tensorized",
            Benchmark::Product => "product",
        })
    }
}

/// Source law uniform on `[0, 1]^d`, target its push-forward by the
/// benchmark map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportProblem {
    pub benchmark: Benchmark,
    pub dim: usize,
}

impl TransportProblem {
    pub fn new(benchmark: Benchmark, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("transport dimension must be positive".into()));
        }
        Ok(TransportProblem { benchmark, dim })
    }

    pub fn sample_source<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n * self.dim).map(|_| rng.random::<f64>()).collect()
    }

    pub fn sample_target<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        self.map(&self.sample_source(rng, n))
    }

    /// Ground-truth map applied to row-major points.
    pub fn map(&self, x: &[f64]) -> Vec<f64> {
        match self.benchmark {
            Benchmark::Identity => x.to_vec(),
            Benchmark::Tensorized => x.iter().map(|&v| tensorized_component(v)).collect(),
            Benchmark::Product => x.chunks(self.dim).flat_map(product_gradient).collect(),
        }
    }
}

pub fn tensorized_component(x: f64) -> f64 {
    x + 1.0 / (6.0 - (2.0 * PI * x).cos()) - 0.2
}

pub fn tensorized_map(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| tensorized_component(v)).collect()
}

/// `3^-d prod_i (x_i^2 + x_i + 1)`
pub fn product_potential(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v + v + 1.0).product::<f64>() / 3f64.powi(x.len() as i32)
}

/// Gradient of [`product_potential`].
pub fn product_gradient(x: &[f64]) -> Vec<f64> {
    let scale = 3f64.powi(-(x.len() as i32));
    (0..x.len())
        .map(|k| {
            let others: f64 = x.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, v)| v * v + v + 1.0).product();
            scale * (2.0 * x[k] + 1.0) * others
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tensorized_examples() {
        assert!(tensorized_component(0.0).abs() < 1e-15);
        assert!((tensorized_component(0.5) - (0.5 + 1.0 / 7.0 - 0.2)).abs() < 1e-15);
        assert!((tensorized_component(0.5) - 0.44286).abs() < 1e-5);
    }

    #[test]
    fn product_examples() {
        assert!((product_potential(&[0.3]) - (0.09 + 0.3 + 1.0) / 3.0).abs() < 1e-15);
        assert!((product_gradient(&[1.0])[0] - 1.0).abs() < 1e-15);
        assert!((product_gradient(&[0.25])[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn product_potential_is_not_convex_near_the_far_corner() {
        // Hessian at (1, 1): 3^-2 [[6, 9], [9, 6]], determinant 36 - 81 < 0
        let h = 1e-4;
        let f = |x: f64, y: f64| product_potential(&[x, y]);
        let (x, y) = (1.0 - h, 1.0 - h);
        let fxx = (f(x + h, y) - 2.0 * f(x, y) + f(x - h, y)) / (h * h);
        let fyy = (f(x, y + h) - 2.0 * f(x, y) + f(x, y - h)) / (h * h);
        let fxy = (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h)) / (4.0 * h * h);
        assert!(fxx > 0.0 && fyy > 0.0);
        assert!(fxx * fyy - fxy * fxy < 0.0);
        // convex near the origin
        let (x, y) = (0.1, 0.1);
        let fxx = (f(x + h, y) - 2.0 * f(x, y) + f(x - h, y)) / (h * h);
        let fyy = (f(x, y + h) - 2.0 * f(x, y) + f(x, y - h)) / (h * h);
        let fxy = (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h)) / (4.0 * h * h);
        assert!(fxx * fyy - fxy * fxy > 0.0);
    }

    #[test]
    fn target_sampling_pushes_the_source_forward() {
        use rand::SeedableRng;
        let pb = TransportProblem::new(Benchmark::Tensorized, 3).unwrap();
        let a = pb.sample_target(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1), 10);
        let x = pb.sample_source(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1), 10);
        assert_eq!(a, pb.map(&x));
    }

    proptest! {
        #[test]
        fn product_gradient_matches_differences(x in proptest::collection::vec(0.0f64..1.0, 1..5)) {
            let g = product_gradient(&x);
            let h = 1e-6;
            for k in 0..x.len() {
                let mut p = x.clone();
                p[k] += h;
                let fp = product_potential(&p);
                p[k] -= 2.0 * h;
                let fm = product_potential(&p);
                prop_assert!(((fp - fm) / (2.0 * h) - g[k]).abs() < 1e-8);
            }
        }

        #[test]
        fn tensorized_map_is_monotone(a in proptest::collection::vec(0.0f64..1.0, 3), b in proptest::collection::vec(0.0f64..1.0, 3)) {
            let pb = TransportProblem::new(Benchmark::Tensorized, 3).unwrap();
            let (ta, tb) = (pb.map(&a), pb.map(&b));
            let dot: f64 = (0..3).map(|i| (ta[i] - tb[i]) * (a[i] - b[i])).sum();
            prop_assert!(dot >= -1e-12);
        }
    }
}
