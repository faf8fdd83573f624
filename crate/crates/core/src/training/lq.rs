//! Discrete-time linear-quadratic control with Gaussian noise.
//!
//! The optimal cost-to-go is `x^T P_0 x + r_0`, obtained from the backward
//! Riccati recursion. Simulated costs under the optimal feedback are
//! unbiased samples of it, which is what a convex network is regressed on.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::fit::{fit, FitConfig, FitReport, Sample, Sampler};
use crate::grid::Hypercube;
use crate::networks::Model;
use crate::verify::uniform_points;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct LqProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    /// Noise covariance.
    pub w: DMatrix<f64>,
    pub horizon: usize,
    /// Initial states are drawn uniformly here.
    pub x0_box: Hypercube,
}

impl LqProblem {
    /// Every matrix the `n x n` identity, initial states on `[-3, 3]^n`.
    pub fn identity(n: usize, horizon: usize) -> Result<Self> {
        let i = DMatrix::identity(n, n);
        Ok(LqProblem {
            a: i.clone(),
            b: i.clone(),
            q: i.clone(),
            r: i.clone(),
            qf: i.clone(),
            w: i,
            horizon,
            x0_box: Hypercube::cube(n, -3.0, 3.0)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let square = |m: &DMatrix<f64>| m.nrows() == n && m.ncols() == n;
        if !(square(&self.a) && square(&self.q) && square(&self.qf) && square(&self.w)) || self.b.nrows() != n {
            return Err(Error::InvalidConfig("LQ matrices have inconsistent sizes".into()));
        }
        let k = self.b.ncols();
        if self.r.nrows() != k || self.r.ncols() != k {
            return Err(Error::InvalidConfig("R must match the control dimension".into()));
        }
        if self.x0_box.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.x0_box.dim() });
        }
        for (name, m) in [("Q", &self.q), ("R", &self.r), ("Q_f", &self.qf), ("W", &self.w)] {
            if (m - m.transpose()).abs().max() > 1e-12 {
                return Err(Error::InvalidConfig(format!("{name} is not symmetric")));
            }
            if m.clone().symmetric_eigenvalues().min() < -1e-12 {
                return Err(Error::InvalidConfig(format!("{name} is not positive semi-definite")));
            }
        }
        Ok(())
    }
}

/// Solution of the backward recursion.
#[derive(Clone, Debug)]
pub struct Riccati {
    /// `P_0 .. P_N`
    pub p: Vec<DMatrix<f64>>,
    /// `K_0 .. K_{N-1}`, optimal control `u_t = K_t x_t`.
    pub k: Vec<DMatrix<f64>>,
    /// `r_0 .. r_N`
    pub r: Vec<f64>,
}

impl Riccati {
    /// `x^T P_0 x + r_0`
    pub fn value(&self, x0: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x0);
        (x.transpose() * &self.p[0] * &x)[0] + self.r[0]
    }
}

pub fn riccati(pb: &LqProblem) -> Result<Riccati> {
    pb.validate()?;
    let n = pb.horizon;
    let mut p = vec![DMatrix::zeros(pb.dim(), pb.dim()); n + 1];
    let mut k = vec![DMatrix::zeros(pb.b.ncols(), pb.dim()); n];
    let mut r = vec![0.0; n + 1];
    p[n] = pb.qf.clone();
    for t in (0..n).rev() {
        let next = p[t + 1].clone();
        let next = &next;
        let s = pb.b.transpose() * next * &pb.b + &pb.r;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| Error::InvalidConfig(format!("R + B^T P B is singular at step {t}")))?;
        let bpa = pb.b.transpose() * next * &pb.a;
        k[t] = -(&s_inv * &bpa);
        p[t] = pb.a.transpose() * next * &pb.a - bpa.transpose() * &s_inv * &bpa + &pb.q;
        r[t] = r[t + 1] + (&pb.w * next).trace();
    }
    Ok(Riccati { p, k, r })
}

/// Cost of one trajectory from `x0` under the gains in `ric`, with the
/// noise increments given explicitly (`noise[t]` is `w_t`).
pub fn lq_cost(pb: &LqProblem, ric: &Riccati, x0: &[f64], noise: &[DVector<f64>]) -> f64 {
    let mut x = DVector::from_column_slice(x0);
    let mut cost = 0.0;
    for t in 0..pb.horizon {
        let u = &ric.k[t] * &x;
        cost += (x.transpose() * &pb.q * &x)[0] + (u.transpose() * &pb.r * &u)[0];
        x = &pb.a * &x + &pb.b * &u + &noise[t];
    }
    cost + (x.transpose() * &pb.qf * &x)[0]
}

/// Square root factor `L` with `L L^T = W`, used to colour the noise.
fn noise_factor(w: &DMatrix<f64>) -> DMatrix<f64> {
    match w.clone().cholesky() {
        Some(c) => c.l(),
        None => {
            let e = w.clone().symmetric_eigen();
            let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
            &e.eigenvectors * d
        }
    }
}

/// One Monte-Carlo sample of the cost from `x0`.
pub fn lq_cost_sample(pb: &LqProblem, ric: &Riccati, x0: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let l = noise_factor(&pb.w);
    lq_cost_with(pb, ric, x0, &l, rng)
}

fn lq_cost_with(pb: &LqProblem, ric: &Riccati, x0: &[f64], l: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let n = pb.dim();
    let noise: Vec<DVector<f64>> = (0..pb.horizon)
        .map(|_| l * DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    lq_cost(pb, ric, x0, &noise)
}

/// Initial states uniform on the problem box, labelled by simulated costs.
pub struct LqSampler {
    pub problem: LqProblem,
    pub riccati: Riccati,
    factor: DMatrix<f64>,
}

impl LqSampler {
    pub fn new(problem: LqProblem) -> Result<Self> {
        let riccati = riccati(&problem)?;
        let factor = noise_factor(&problem.w);
        Ok(LqSampler { problem, riccati, factor })
    }
}

impl Sampler for LqSampler {
    fn draw(&mut self, rng: &mut ChaCha8Rng, n: usize) -> Sample {
        let x = uniform_points(rng, &self.problem.x0_box, n);
        let y = x
            .chunks(self.problem.dim())
            .map(|x0| lq_cost_with(&self.problem, &self.riccati, x0, &self.factor, rng))
            .collect();
        (x, y)
    }
}

/// Relative error `|model - J*| / J*` on a tensor grid.
#[derive(Clone, Debug, Serialize)]
pub struct GridError {
    pub x1: f64,
    pub x2: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct LqReport {
    pub fit: FitReport,
    pub grid: Vec<GridError>,
    pub max_rel_error: f64,
    /// `|model(0) - r_0| / r_0`
    pub offset_rel_error: f64,
}

/// Regresses `model` on simulated costs and compares it with the exact value
/// function on a `per_axis x per_axis` grid over the first two coordinates
/// (the others held at 0).
pub fn lq_fit(model: &mut Model, problem: &LqProblem, cfg: &FitConfig, per_axis: usize) -> Result<LqReport> {
    if model.dim() != problem.dim() {
        return Err(Error::DimensionMismatch { expected: problem.dim(), got: model.dim() });
    }
    let mut sampler = LqSampler::new(problem.clone())?;
    let report = fit(model, &mut sampler, cfg)?;
    let ric = &sampler.riccati;
    let n = problem.dim();
    let bx = &problem.x0_box;
    let per_axis = per_axis.max(2);
    let mut pts = Vec::with_capacity(per_axis * per_axis * n);
    for i in 0..per_axis {
        for j in 0..per_axis {
            let mut x = vec![0.0; n];
            x[0] = bx.lower[0] + bx.width(0) * i as f64 / (per_axis - 1) as f64;
            if n > 1 {
                x[1] = bx.lower[1] + bx.width(1) * j as f64 / (per_axis - 1) as f64;
            }
            pts.extend(x);
        }
    }
    let f = model.predict(&pts)?;
    let grid: Vec<GridError> = pts
        .chunks(n)
        .zip(&f)
        .map(|(x, v)| {
            let exact = ric.value(x);
            GridError { x1: x[0], x2: if n > 1 { x[1] } else { 0.0 }, rel_error: (v - exact).abs() / exact.abs() }
        })
        .collect();
    let max_rel_error = grid.iter().map(|g| g.rel_error).fold(0.0, f64::max);
    let origin = model.predict(&vec![0.0; n])?[0];
    Ok(LqReport { fit: report, grid, max_rel_error, offset_rel_error: (origin - ric.r[0]).abs() / ric.r[0].abs() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn identity_recursion_matches_scalar_iteration() {
        let pb = LqProblem::identity(2, 3).unwrap();
        let ric = riccati(&pb).unwrap();
        let i = DMatrix::<f64>::identity(2, 2);
        assert!((&ric.p[2] - &i * 1.5).abs().max() <= 1e-12);
        assert!((&ric.p[1] - &i * 1.6).abs().max() <= 1e-12);
        assert!((&ric.p[0] - &i * (1.6 / 2.6 + 1.0)).abs().max() <= 1e-12);
        // scalar recursion p <- p / (p + 1) + 1
        let mut p = 1.0;
        let mut r = 0.0;
        for t in (0..3).rev() {
            r += 2.0 * p;
            p = p / (p + 1.0) + 1.0;
            assert!((ric.p[t][(0, 0)] - p).abs() <= 1e-12);
            assert!((ric.r[t] - r).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_costs_give_zero_value() {
        let mut pb = LqProblem::identity(2, 4).unwrap();
        pb.q = DMatrix::zeros(2, 2);
        pb.qf = DMatrix::zeros(2, 2);
        let ric = riccati(&pb).unwrap();
        assert!(ric.p.iter().all(|p| p.abs().max() == 0.0));
        assert!(ric.k.iter().all(|k| k.abs().max() == 0.0));
    }

    #[test]
    fn offset_is_sum_of_noise_traces() {
        let mut pb = LqProblem::identity(2, 5).unwrap();
        pb.w = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
        pb.a = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 0.9]);
        let ric = riccati(&pb).unwrap();
        let sum: f64 = (0..5).map(|t| (&pb.w * &ric.p[t + 1]).trace()).sum();
        assert!((ric.r[0] - sum).abs() <= 1e-12);
    }

    #[test]
    fn noiseless_cost_equals_quadratic_value() {
        let mut pb = LqProblem::identity(2, 5).unwrap();
        pb.a = DMatrix::from_row_slice(2, 2, &[1.1, 0.3, -0.2, 0.8]);
        pb.b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 1.0]);
        let ric = riccati(&pb).unwrap();
        let zero = vec![DVector::zeros(2); 5];
        assert_eq!(lq_cost(&pb, &ric, &[0.0, 0.0], &zero), 0.0);
        for x0 in [[1.0, -2.0], [0.3, 2.7], [-3.0, -3.0]] {
            let x = DVector::from_column_slice(&x0);
            let quad = (x.transpose() * &ric.p[0] * &x)[0];
            let c = lq_cost(&pb, &ric, &x0, &zero);
            assert!((c - quad).abs() <= 1e-10 * quad.max(1.0), "{c} vs {quad}");
        }
    }

    #[test]
    fn monte_carlo_mean_matches_value() {
        let pb = LqProblem::identity(2, 5).unwrap();
        let ric = riccati(&pb).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let x0 = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let n = 100_000;
            let samples: Vec<f64> = (0..n).map(|_| lq_cost_sample(&pb, &ric, &x0, &mut rng)).collect();
            let mean = samples.iter().sum::<f64>() / n as f64;
            let var = samples.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!((mean - ric.value(&x0)).abs() <= 3.0 * se, "{mean} vs {}", ric.value(&x0));
        }
    }

    #[test]
    fn invalid_problems_are_rejected() {
        let mut pb = LqProblem::identity(2, 3).unwrap();
        pb.q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(riccati(&pb).is_err());
        let mut pb = LqProblem::identity(2, 3).unwrap();
        pb.r = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        assert!(riccati(&pb).is_err());
    }
}
