//! Two-potential minimax estimation of a Brenier map.
//!
//! `psi` is trained on source samples `Y` and `phi` on target samples `X`.
//! The inner problem lowers `mean(phi(grad psi(Y)) - <Y, grad psi(Y)>)` in
//! the parameters of `psi`; the outer step raises the same quantity minus
//! `mean(phi(X))` in the parameters of `phi`. The estimated map from source
//! to target is `grad psi`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::benchmarks::TransportProblem;
use super::linear::LinearMap;
use super::uvp::uvp;
use crate::autodiff::{Adam, ParamStore, Tape, Tensor};
use crate::grid::Hypercube;
use crate::networks::{Activation, Family, Model, NetworkSpec};
use crate::verify::uniform_points;
use crate::{rng, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimaxConfig {
    /// Outer iterations.
    pub outer: usize,
    /// Inner iterations per outer iteration.
    pub inner: usize,
    pub batch: usize,
    pub lr: f64,
    /// Outer iterations between evaluations on the test set.
    pub eval_every: usize,
    pub test_size: usize,
    pub validation_size: usize,
    /// Identity pretraining steps for each potential.
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    /// Sample size used to fix the potential domains.
    pub pilot_size: usize,
    /// Relative inflation of the pilot bounding boxes.
    pub margin: f64,
    pub seed: u64,
    /// Training stops with an error once the test UVP exceeds this.
    pub divergence: f64,
}

impl Default for MinimaxConfig {
    fn default() -> Self {
        MinimaxConfig {
            outer: 3000,
            inner: 15,
            batch: 1024,
            lr: 1e-3,
            eval_every: 100,
            test_size: 4096,
            validation_size: 1 << 14,
            pretrain_steps: 2000,
            pretrain_lr: 1e-2,
            pilot_size: 1 << 14,
            margin: 0.05,
            seed: 0,
            divergence: 1e4,
        }
    }
}

impl MinimaxConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("batch", self.batch), ("eval_every", self.eval_every), ("test_size", self.test_size), ("validation_size", self.validation_size), ("pilot_size", self.pilot_size)] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("lr", self.lr), ("pretrain_lr", self.pretrain_lr), ("margin", self.margin)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be a nonnegative number")));
            }
        }
        Ok(())
    }
}

/// Architecture shared by both potentials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub family: Family,
    pub hidden: Vec<usize>,
    pub p: usize,
    pub adapt: bool,
    pub activation: Activation,
}

impl PotentialSpec {
    /// Cubic network with `max(2d, 10)` and `max(d, 5)` neurons.
    pub fn cubic_default(d: usize, p: usize) -> Self {
        PotentialSpec { family: Family::Cubic, hidden: vec![(2 * d).max(10), d.max(5)], p, adapt: true, activation: Activation::Relu }
    }

    pub fn network(&self, domain: Hypercube) -> Result<NetworkSpec> {
        let spec = match self.family {
            Family::P1 | Family::Cubic => NetworkSpec::ickan(self.family, domain, self.hidden.clone(), self.p, self.adapt),
            Family::Icnn => NetworkSpec::icnn(domain, self.hidden.clone(), self.activation),
            f => return Err(Error::InvalidSpec(format!("{f} has no input gradient to transport with"))),
        };
        Ok(spec.with_extrapolation(true))
    }
}

/// Bounding boxes of pilot samples from the source and the target, each
/// inflated by `margin`.
pub fn potential_domains(problem: &TransportProblem, cfg: &MinimaxConfig) -> Result<(Hypercube, Hypercube)> {
    let mut r = rng::stream("ot/pilot", cfg.seed, 0);
    let src = problem.sample_source(&mut r, cfg.pilot_size);
    let tgt = problem.sample_target(&mut r, cfg.pilot_size);
    let d = problem.dim;
    Ok((Hypercube::bounding(&src, d)?.inflate(cfg.margin).widened(), Hypercube::bounding(&tgt, d)?.inflate(cfg.margin).widened()))
}

/// Fresh `(phi, psi)` on the target and source domains.
pub fn build_potentials(problem: &TransportProblem, pot: &PotentialSpec, cfg: &MinimaxConfig) -> Result<(Model, Model)> {
    let (src, tgt) = potential_domains(problem, cfg)?;
    let mut r = rng::stream("ot/init", cfg.seed, 0);
    let phi = Model::new(pot.network(tgt)?, &mut r)?;
    let psi = Model::new(pot.network(src)?, &mut r)?;
    Ok((phi, psi))
}

/// `mean |grad f(x) - x|^2` over a batch, with one Adam step when `adam` is
/// given.
fn identity_loss(model: &mut Model, x: &[f64], adam: Option<&mut Adam>) -> Result<f64> {
    let n = model.dim();
    let b = x.len() / n;
    let mut tape = Tape::new();
    let bind = model.store.bind(&mut tape, adam.is_some());
    let xv = tape.constant(Tensor::new(vec![b, n], x.to_vec())?);
    let g = model.record(&mut tape, &bind, xv, true)?.grad.expect("requested");
    let r = tape.sub(g, xv);
    let sq = tape.mul(r, r);
    let s = tape.sum(sq);
    let loss = tape.scale(s, 1.0 / b as f64);
    let value = tape.data(loss)[0];
    if let Some(adam) = adam {
        let adj = tape.backward(loss)?;
        model.store.accumulate(&bind, &adj);
        if adam.step(&mut model.store) {
            model.after_step();
        }
    }
    Ok(value)
}

/// Fits `grad f` to the identity on uniform points of `domain`; returns the
/// mean squared identity error on a fresh sample.
pub fn identity_pretrain(model: &mut Model, domain: &Hypercube, steps: usize, batch: usize, lr: f64, seed: u64) -> Result<f64> {
    let mut r = rng::stream("ot/pretrain", seed, 0);
    let mut adam = Adam::with_lr(lr);
    for _ in 0..steps {
        let x = uniform_points(&mut r, domain, batch);
        identity_loss(model, &x, Some(&mut adam))?;
    }
    let x = uniform_points(&mut r, domain, 4096);
    identity_loss(model, &x, None)
}

/// Inner step on `psi` at source batch `y`. Returns the objective before the step.
pub fn inner_step(phi: &Model, psi: &mut Model, adam: &mut Adam, y: &[f64]) -> Result<f64> {
    let d = psi.dim();
    let b = y.len() / d;
    let mut tape = Tape::new();
    let bpsi = psi.store.bind(&mut tape, true);
    let bphi = phi.store.bind(&mut tape, false);
    let yv = tape.constant(Tensor::new(vec![b, d], y.to_vec())?);
    let g = psi.record(&mut tape, &bpsi, yv, true)?.grad.expect("requested");
    let f = phi.record(&mut tape, &bphi, g, false)?.out;
    let yg = tape.mul(yv, g);
    let fs = tape.sum(f);
    let ygs = tape.sum(yg);
    let diff = tape.sub(fs, ygs);
    let loss = tape.scale(diff, 1.0 / b as f64);
    let value = tape.data(loss)[0];
    let adj = tape.backward(loss)?;
    psi.store.accumulate(&bpsi, &adj);
    if adam.step(&mut psi.store) {
        psi.after_step();
    }
    Ok(value)
}

/// Outer step on `phi`: descends `mean(phi(x)) - mean(phi(grad psi(y)))`.
pub fn outer_step(phi: &mut Model, psi: &Model, adam: &mut Adam, x: &[f64], y: &[f64]) -> Result<f64> {
    let d = phi.dim();
    let (bx, by) = (x.len() / d, y.len() / d);
    let mut tape = Tape::new();
    let bphi = phi.store.bind(&mut tape, true);
    let bpsi = psi.store.bind(&mut tape, false);
    let yv = tape.constant(Tensor::new(vec![by, d], y.to_vec())?);
    let xv = tape.constant(Tensor::new(vec![bx, d], x.to_vec())?);
    let g = psi.record(&mut tape, &bpsi, yv, true)?.grad.expect("requested");
    let fx = phi.record(&mut tape, &bphi, xv, false)?.out;
    let fg = phi.record(&mut tape, &bphi, g, false)?.out;
    let mx = tape.mean(fx);
    let mg = tape.mean(fg);
    let loss = tape.sub(mx, mg);
    let value = tape.data(loss)[0];
    let adj = tape.backward(loss)?;
    phi.store.accumulate(&bphi, &adj);
    if adam.step(&mut phi.store) {
        phi.after_step();
    }
    Ok(value)
}

/// `grad psi` on row-major points, evaluated in chunks.
pub fn transport(psi: &Model, x: &[f64]) -> Result<Vec<f64>> {
    let d = psi.dim();
    let mut out = Vec::with_capacity(x.len());
    for chunk in x.chunks(8192 * d) {
        out.extend(psi.extrapolated_eval(chunk)?.1);
    }
    Ok(out)
}

/// UVP of `grad psi` against the benchmark map on source points `x`.
pub fn map_uvp(psi: &Model, problem: &TransportProblem, x: &[f64]) -> Result<f64> {
    let truth = problem.map(x);
    uvp(&transport(psi, x)?, &truth, &truth, problem.dim)
}

#[derive(Clone, Debug, Serialize)]
pub struct MinimaxReport {
    /// Lowest test-set UVP seen at an evaluation.
    pub best_uvp: f64,
    pub best_outer: usize,
    /// UVP of the kept parameters on a fresh validation sample.
    pub final_uvp: f64,
    /// `(outer iteration, test UVP)`
    pub trace: Vec<(usize, f64)>,
    pub pretrain_error: (f64, f64),
    pub skipped: u64,
    pub wall_seconds: f64,
}

/// Gaussian linear map fitted on `n` source and `n` target samples, with
/// its UVP on `n` fresh source points.
pub fn linear_baseline(problem: &TransportProblem, n: usize, seed: u64) -> Result<(LinearMap, f64)> {
    let mut r = rng::stream("ot/linear", seed, 0);
    let mu = problem.sample_source(&mut r, n);
    let nu = problem.sample_target(&mut r, n);
    let map = LinearMap::fit(&mu, &nu, problem.dim)?;
    let val = problem.sample_source(&mut r, n);
    let truth = problem.map(&val);
    let u = uvp(&map.apply(&val), &truth, &truth, problem.dim)?;
    Ok((map, u))
}

/// Row of the transport results table.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct OtRow {
    pub benchmark: String,
    pub method: String,
    pub d: usize,
    #[serde(rename = "P")]
    pub p: usize,
    pub neurons: String,
    pub run: usize,
    pub best_uvp: f64,
    pub final_uvp: f64,
    pub outer_iters: usize,
}

/// Identity pretraining of both potentials followed by the alternating
/// scheme. Both models are left at the parameters with the lowest test UVP.
pub fn minimax_train(phi: &mut Model, psi: &mut Model, problem: &TransportProblem, cfg: &MinimaxConfig) -> Result<MinimaxReport> {
    cfg.validate()?;
    let d = problem.dim;
    if phi.dim() != d || psi.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: if phi.dim() != d { phi.dim() } else { psi.dim() } });
    }
    let start = Instant::now();
    let pre_psi = identity_pretrain(psi, &psi.spec.domain.clone(), cfg.pretrain_steps, cfg.batch, cfg.pretrain_lr, cfg.seed)?;
    let pre_phi = identity_pretrain(phi, &phi.spec.domain.clone(), cfg.pretrain_steps, cfg.batch, cfg.pretrain_lr, cfg.seed ^ 1)?;

    let mut r = rng::stream("ot/train", cfg.seed, 0);
    let test = problem.sample_source(&mut rng::stream("ot/test", cfg.seed, 0), cfg.test_size);
    let mut adam_psi = Adam::with_lr(cfg.lr);
    let mut adam_phi = Adam::with_lr(cfg.lr);
    let mut best: Option<(f64, usize, ParamStore, ParamStore)> = None;
    let mut trace = Vec::new();
    for it in 1..=cfg.outer {
        for _ in 0..cfg.inner {
            let y = problem.sample_source(&mut r, cfg.batch);
            inner_step(phi, psi, &mut adam_psi, &y)?;
        }
        let x = problem.sample_target(&mut r, cfg.batch);
        let y = problem.sample_source(&mut r, cfg.batch);
        outer_step(phi, psi, &mut adam_phi, &x, &y)?;
        if it % cfg.eval_every == 0 || it == cfg.outer {
            let u = map_uvp(psi, problem, &test)?;
            trace.push((it, u));
            if !u.is_finite() || u > cfg.divergence {
                return Err(Error::Diverged(format!(
                    "test UVP {u:.3e} at outer iteration {it}; best so far {:?}",
                    best.as_ref().map(|b| (b.0, b.1))
                )));
            }
            if best.as_ref().is_none_or(|b| u < b.0) {
                best = Some((u, it, phi.store.clone(), psi.store.clone()));
            }
        }
    }
    let (best_uvp, best_outer) = match best {
        Some((u, it, sphi, spsi)) => {
            phi.store = sphi;
            psi.store = spsi;
            phi.refresh_boxes();
            psi.refresh_boxes();
            (u, it)
        }
        None => (f64::NAN, 0),
    };
    let val = problem.sample_source(&mut rng::stream("ot/validation", cfg.seed, 0), cfg.validation_size);
    Ok(MinimaxReport {
        best_uvp,
        best_outer,
        final_uvp: map_uvp(psi, problem, &val)?,
        trace,
        pretrain_error: (pre_psi, pre_phi),
        skipped: adam_psi.skipped() + adam_phi.skipped(),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Component `coord` of `grad psi` and of the exact map along the segment
/// where every other coordinate is `fixed`.
pub fn map_slice(psi: &Model, problem: &TransportProblem, coord: usize, fixed: f64, n: usize) -> Result<Vec<(f64, f64, f64)>> {
    let d = problem.dim;
    let mut pts = Vec::with_capacity(n * d);
    for i in 0..n {
        let t = i as f64 / (n - 1).max(1) as f64;
        pts.extend((0..d).map(|k| if k == coord { t } else { fixed }));
    }
    let est = transport(psi, &pts)?;
    let truth = problem.map(&pts);
    Ok((0..n).map(|i| (pts[i * d + coord], est[i * d + coord], truth[i * d + coord])).collect())
}
