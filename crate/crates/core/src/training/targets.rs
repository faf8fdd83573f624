//! Synthetic regression targets.

use crate::{Error, Result};

/// Symmetric positive-definite matrix with entries `0.5^|i-j|`.
pub fn kms_matrix(d: usize) -> Vec<f64> {
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = 0.5f64.powi((i as i32 - j as i32).abs());
        }
    }
    a
}

fn quad_form(x: &[f64], a: &[f64]) -> f64 {
    let d = x.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += x[i] * a[i * d + j] * x[j];
        }
    }
    s
}

/// `sum_i (|x_i| + |1 - x_i|) + x^T A x` with `A` row-major `d x d`.
pub fn quadratic_kink(x: &[f64], a: &[f64]) -> f64 {
    x.iter().map(|v| v.abs() + (1.0 - v).abs()).sum::<f64>() + quad_form(x, a)
}

/// `1 + 2 * sum(x) + x^T Q x` where `Q = -0.5` in one dimension and
/// `diag(1, -0.5)` in two. Concave along the last axis.
pub fn wrong_convexity(x: &[f64]) -> Result<f64> {
    let q: &[f64] = match x.len() {
        1 => &[-0.5],
        2 => &[1.0, 0.0, 0.0, -0.5],
        d => return Err(Error::DimensionMismatch { expected: 2, got: d }),
    };
    Ok(1.0 + 2.0 * x.iter().sum::<f64>() + quad_form(x, q))
}

/// `|y + 1| |x + 2x^3|`: convex in `y` for every `x`, not convex in `x`.
pub fn partial(x: f64, y: f64) -> f64 {
    (y + 1.0).abs() * (x + 2.0 * x.powi(3)).abs()
}

/// The four one-dimensional test functions used for single-layer fits on
/// `[-10, 10]`. The fourth is taken exactly as written, which makes it
/// jump at `|x| = 3`.
pub fn appendix(i: usize, x: f64) -> Result<f64> {
    Ok(match i {
        1 => x * x,
        2 => x * x + 10.0 * if x < 0.0 { x.exp() - 1.0 } else { x },
        3 => (x * x + 1.0).powi(2),
        4 => (if x.abs() <= 3.0 { x.abs() } else { 0.0 }) + (x * x - 3.0) / 2.0,
        _ => return Err(Error::InvalidConfig(format!("appendix target {i} does not exist (1..=4)"))),
    })
}
