//! Percentage of unexplained variance.

use crate::{Error, Result};

/// Trace of the empirical covariance of row-major `d`-vectors.
pub fn total_variance(y: &[f64], d: usize) -> Result<f64> {
    let n = y.len() / d;
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let mut mean = vec![0.0; d];
    let mut second = 0.0;
    for row in y.chunks(d) {
        for k in 0..d {
            mean[k] += row[k];
            second += row[k] * row[k];
        }
    }
    let nf = n as f64;
    Ok(second / nf - mean.iter().map(|m| (m / nf).powi(2)).sum::<f64>())
}

/// `100 * mean |T*(x_i) - T(x_i)|^2 / Var(nu)` where `pred` and `truth` hold
/// the estimated and exact images of the same source points and `nu` is a
/// target sample that fixes the normalization.
pub fn uvp(pred: &[f64], truth: &[f64], nu: &[f64], d: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: pred.len() });
    }
    let n = pred.len() / d;
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let err: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
    Ok(100.0 * err / total_variance(nu, d)?)
}
