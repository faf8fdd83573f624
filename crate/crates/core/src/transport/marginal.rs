//! Per-coordinate histograms and Gaussian kernel density estimates.

use serde::Serialize;

use crate::{Error, Result};

/// Histogram and density of one coordinate on a fixed grid.
#[derive(Clone, Debug, Serialize)]
pub struct Marginal {
    pub coord: usize,
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub grid: Vec<f64>,
    pub kde: Vec<f64>,
    pub bandwidth: f64,
}

/// Scott's rule in one dimension: `sigma * n^(-1/5)`.
pub fn scott_bandwidth(x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < 2 {
        return Err(Error::EmptySample);
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(var.sqrt() * (n as f64).powf(-0.2))
}

pub fn gaussian_kde(x: &[f64], bandwidth: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (x.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&g| x.iter().map(|&v| (-0.5 * ((g - v) / bandwidth).powi(2)).exp()).sum::<f64>() * norm)
        .collect()
}

/// One [`Marginal`] per coordinate of the row-major `d`-dimensional
/// `samples`, over `[lo, hi]`.
pub fn marginal_report(samples: &[f64], d: usize, lo: f64, hi: f64, bins: usize, grid_points: usize) -> Result<Vec<Marginal>> {
    if samples.len() < d || d == 0 {
        return Err(Error::EmptySample);
    }
    if !(lo < hi) || bins == 0 || grid_points < 2 {
        return Err(Error::InvalidConfig("marginal report needs lo < hi, bins >= 1 and two grid points".into()));
    }
    let edges: Vec<f64> = (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect();
    let grid: Vec<f64> = (0..grid_points).map(|i| lo + (hi - lo) * i as f64 / (grid_points - 1) as f64).collect();
    (0..d)
        .map(|k| {
            let col: Vec<f64> = samples.iter().skip(k).step_by(d).copied().collect();
            let mut counts = vec![0; bins];
            for &v in &col {
                if (lo..=hi).contains(&v) {
                    let b = (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1);
                    counts[b] += 1;
                }
            }
            let bandwidth = scott_bandwidth(&col)?;
            Ok(Marginal { coord: k, edges: edges.clone(), counts, grid: grid.clone(), kde: gaussian_kde(&col, bandwidth, &grid), bandwidth })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn normal_density_peaks_near_its_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x: Vec<f64> = (0..20_000).map(|_| rng.sample(StandardNormal)).collect();
        let m = marginal_report(&x, 1, -4.0, 4.0, 40, 81).unwrap();
        let at0 = m[0].kde[40];
        assert!((at0 - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 0.02, "{at0}");
        let peak = m[0].kde.iter().cloned().fold(0.0, f64::max);
        assert_eq!(peak, at0.max(m[0].kde[39]).max(m[0].kde[41]));
    }

    #[test]
    fn uniform_histogram_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 50_000;
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let bins = 10;
        for m in marginal_report(&x, 1, 0.0, 1.0, bins, 11).unwrap() {
            let p = 1.0 / bins as f64;
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            for c in m.counts {
                assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sd, "{c}");
            }
        }
    }

    #[test]
    fn empty_sample_is_an_error() {
        assert!(matches!(marginal_report(&[], 2, 0.0, 1.0, 5, 5), Err(Error::EmptySample)));
    }
}
