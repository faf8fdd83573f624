//! Gaussian (linear) transport baseline and the matrix square root it needs.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Eigenvalues and eigenvectors (columns) of a symmetric matrix by cyclic
/// Jacobi rotations.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = DMatrix::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[(i, j)].powi(2)).sum();
        let scale: f64 = m.iter().map(|x| x * x).sum::<f64>();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    (m.diagonal(), v)
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::InvalidConfig(format!("{}x{} matrix is not square", a.nrows(), a.ncols())));
    }
    let asym = (a - a.transpose()).abs().max();
    if asym > 1e-10 * a.abs().max().max(1.0) {
        return Err(Error::InvalidConfig(format!("matrix is not symmetric (asymmetry {asym:.2e})")));
    }
    Ok(())
}

/// Applies `f` to the eigenvalues of a symmetric matrix.
fn spectral(a: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (w, v) = jacobi_eigen(a);
    &v * DMatrix::from_diagonal(&w.map(f)) * v.transpose()
}

/// Square root of a symmetric positive semi-definite matrix. Eigenvalues
/// down to `-1e-10` are treated as 0.
pub fn sqrtm_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(a)?;
    let (w, _) = jacobi_eigen(a);
    if let Some(bad) = w.iter().find(|&&x| x < -1e-10) {
        return Err(Error::InvalidConfig(format!("matrix has negative eigenvalue {bad:.3e}")));
    }
    Ok(spectral(a, |x| x.max(0.0).sqrt()))
}

/// `x -> A (x - m1) + m2`.
#[derive(Clone, Debug)]
pub struct LinearMap {
    pub a: DMatrix<f64>,
    pub m1: DVector<f64>,
    pub m2: DVector<f64>,
    /// Set when the source covariance was singular and `1e-9 I` was added.
    pub regularized: bool,
}

fn moments(x: &[f64], d: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = x.len() / d;
    if n == 0 || x.len() % d != 0 {
        return Err(Error::EmptySample);
    }
    let data = DMatrix::from_row_slice(n, d, x);
    let mean = data.row_mean().transpose();
    let second = data.transpose() * &data / n as f64;
    Ok((mean.clone(), second - &mean * mean.transpose()))
}

impl LinearMap {
    /// Gaussian optimal map between the empirical first and second moments of
    /// the two samples.
    pub fn fit(mu: &[f64], nu: &[f64], d: usize) -> Result<LinearMap> {
        let (m1, mut s1) = moments(mu, d)?;
        let (m2, s2) = moments(nu, d)?;
        let (w, _) = jacobi_eigen(&s1);
        let regularized = w.min() <= 1e-12 * w.max().abs().max(1e-300);
        if regularized {
            s1 += DMatrix::identity(d, d) * 1e-9;
        }
        let r = sqrtm_psd(&s1)?;
        let r_inv = spectral(&s1, |x| 1.0 / x.max(0.0).sqrt());
        let mid = &r * &s2 * &r;
        let mid = (&mid + mid.transpose()) * 0.5;
        let a = &r_inv * sqrtm_psd(&mid)? * &r_inv;
        Ok(LinearMap { a, m1, m2, regularized })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.m1.len();
        x.chunks(d)
            .flat_map(|row| {
                let y = &self.a * (DVector::from_column_slice(row) - &self.m1) + &self.m2;
                y.iter().copied().collect::<Vec<_>>()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn sqrtm_examples() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert!((sqrtm_psd(&i).unwrap() - &i).abs().max() < 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let r = sqrtm_psd(&d).unwrap();
        assert!((r - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).abs().max() < 1e-14);
    }

    #[test]
    fn sqrtm_of_random_psd_multiplies_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for rank in [8, 5] {
            let g = DMatrix::from_fn(8, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
            let a = &g * g.transpose();
            let r = sqrtm_psd(&a).unwrap();
            assert!((&r * &r - &a).abs().max() <= 1e-8, "rank {rank}");
            assert!((&r - r.transpose()).abs().max() <= 1e-10);
        }
    }

    #[test]
    fn sqrtm_rejects_bad_input() {
        assert!(sqrtm_psd(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).is_err());
        assert!(sqrtm_psd(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).is_err());
    }

    #[test]
    fn identical_samples_give_the_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..3000).map(|_| rng.random::<f64>()).collect();
        let map = LinearMap::fit(&x, &x, 3).unwrap();
        assert!((&map.a - DMatrix::identity(3, 3)).abs().max() <= 1e-8);
        let y = map.apply(&x[..30]);
        assert!(y.iter().zip(&x[..30]).all(|(a, b)| (a - b).abs() <= 1e-8));
    }

    #[test]
    fn scaled_gaussian_gives_twice_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 200_000;
        let mu: Vec<f64> = (0..2 * n).map(|_| rng.sample(StandardNormal)).collect();
        let nu: Vec<f64> = (0..2 * n).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let map = LinearMap::fit(&mu, &nu, 2).unwrap();
        assert!((&map.a - DMatrix::identity(2, 2) * 2.0).abs().max() < 0.03, "{}", map.a);
    }

    #[test]
    fn recovers_a_known_spd_map_with_shrinking_error() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut errs = Vec::new();
        for n in [1_000, 100_000] {
            let mu: Vec<f64> = (0..2 * n).map(|_| rng.sample(StandardNormal)).collect();
            // an independent draw, so only sampling error separates the fit from `a`
            let fresh: Vec<f64> = (0..2 * n).map(|_| rng.sample(StandardNormal)).collect();
            let nu: Vec<f64> = fresh
                .chunks(2)
                .flat_map(|r| (&a * DVector::from_column_slice(r)).iter().copied().collect::<Vec<_>>())
                .collect();
            let fit = LinearMap::fit(&mu, &nu, 2).unwrap();
            errs.push((&fit.a - &a).norm());
        }
        assert!(errs[1] < errs[0] && errs[1] < 0.05, "{errs:?}");
    }

    #[test]
    fn exact_push_forward_by_spd_map_is_recovered() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mu: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let nu: Vec<f64> = mu.chunks(2).flat_map(|r| (&a * DVector::from_column_slice(r)).iter().copied().collect::<Vec<_>>()).collect();
        let fit = LinearMap::fit(&mu, &nu, 2).unwrap();
        assert!((&fit.a - &a).abs().max() < 1e-8);
    }

    #[test]
    fn singular_source_is_regularized() {
        let x: Vec<f64> = (0..100).flat_map(|i| [i as f64 / 100.0, 0.5]).collect();
        let map = LinearMap::fit(&x, &x, 2).unwrap();
        assert!(map.regularized);
        assert!(map.a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn empty_samples_are_rejected() {
        assert!(matches!(LinearMap::fit(&[], &[], 2), Err(Error::EmptySample)));
    }
}
