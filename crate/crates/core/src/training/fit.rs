//! Mean-squared-error training with Adam on fresh uniform batches.

use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, ParamStore, Tape, Tensor};
use crate::grid::Hypercube;
use crate::networks::Model;
use crate::verify::uniform_points;
use crate::{rng, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub batch: usize,
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
    /// Size of the held-out sample behind the reported MSE.
    pub validation: usize,
    /// Size of the sample used to choose which parameters to keep.
    pub selection: usize,
    /// Steps between evaluations on the selection sample.
    pub eval_every: usize,
    /// Consecutive non-finite losses tolerated before giving up.
    pub max_nonfinite: usize,
    /// Before training, move the output intercept so the mean prediction
    /// on the selection sample matches the mean target.
    #[serde(default = "yes")]
    pub init_offset: bool,
}

fn yes() -> bool {
    true
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            batch: 1000,
            iterations: 20_000,
            lr: 1e-3,
            seed: 0,
            validation: 100_000,
            selection: 10_000,
            eval_every: 500,
            max_nonfinite: 50,
            init_offset: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch", self.batch),
            ("validation", self.validation),
            ("selection", self.selection),
            ("eval_every", self.eval_every),
            ("max_nonfinite", self.max_nonfinite),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidConfig(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FitReport {
    /// MSE of the kept parameters on the validation sample.
    pub val_mse: f64,
    /// Step at which the kept parameters were reached.
    pub best_step: usize,
    /// `(step, selection MSE)` at every evaluation.
    pub evals: Vec<(usize, f64)>,
    pub iterations: usize,
    /// Optimizer steps dropped for non-finite gradients.
    pub skipped: u64,
    pub wall_seconds: f64,
}

impl FitReport {
    /// Selection MSE of every checkpoint that replaced the previous best.
    pub fn kept(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for &(s, v) in &self.evals {
            if out.last().is_none_or(|&(_, b)| v < b) {
                out.push((s, v));
            }
        }
        out
    }
}

/// Row of the regression results table.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FitRow {
    pub method: String,
    pub layers: usize,
    pub neurons: usize,
    #[serde(rename = "P")]
    pub p: usize,
    pub run: usize,
    pub iterations: usize,
    pub mse: f64,
    pub wall_seconds: f64,
}

/// Labelled points `(x row-major, y)`.
pub type Sample = (Vec<f64>, Vec<f64>);

/// Draws `n` labelled training points.
pub trait Sampler {
    fn draw(&mut self, rng: &mut ChaCha8Rng, n: usize) -> Sample;
}

/// Uniform inputs on a box, labelled by a deterministic function.
pub struct UniformTarget<'a> {
    pub domain: Hypercube,
    pub target: &'a (dyn Fn(&[f64]) -> f64 + Sync),
}

impl Sampler for UniformTarget<'_> {
    fn draw(&mut self, rng: &mut ChaCha8Rng, n: usize) -> Sample {
        let x = uniform_points(rng, &self.domain, n);
        let y = x.chunks(self.domain.dim()).map(|r| (self.target)(r)).collect();
        (x, y)
    }
}

const EVAL_CHUNK: usize = 8192;

/// Mean squared error of `model` on a labelled sample.
pub fn mse(model: &Model, sample: &Sample) -> Result<f64> {
    let n = model.dim();
    let (x, y) = sample;
    if y.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut total = 0.0;
    for (xc, yc) in x.chunks(EVAL_CHUNK * n).zip(y.chunks(EVAL_CHUNK)) {
        let f = model.predict(xc)?;
        total += f.iter().zip(yc).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / y.len() as f64)
}

fn predict_chunked(model: &Model, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(x.len() / model.dim());
    for xc in x.chunks(EVAL_CHUNK * model.dim()) {
        out.extend(model.predict(xc)?);
    }
    Ok(out)
}

/// One Adam step on the batch MSE. Returns the loss before the step.
pub fn mse_step(model: &mut Model, adam: &mut Adam, x: &[f64], y: &[f64]) -> Result<f64> {
    let n = model.dim();
    let b = y.len();
    let mut tape = Tape::new();
    let bind = model.store.bind(&mut tape, true);
    let xv = tape.constant(Tensor::new(vec![b, n], x.to_vec())?);
    let pass = model.record(&mut tape, &bind, xv, false)?;
    let t = tape.constant(Tensor::new(vec![b, 1], y.to_vec())?);
    let r = tape.sub(pass.out, t);
    let sq = tape.mul(r, r);
    let loss = tape.mean(sq);
    let value = tape.data(loss)[0];
    let adj = tape.backward(loss)?;
    model.store.accumulate(&bind, &adj);
    if adam.step(&mut model.store) {
        model.after_step();
    }
    Ok(value)
}

/// Trains on batches from `sampler`, evaluates on a fixed selection sample
/// every `eval_every` steps and keeps the best parameters seen. The model
/// is left at those parameters and scored on a fresh validation sample.
pub fn fit<S: Sampler>(model: &mut Model, sampler: &mut S, cfg: &FitConfig) -> Result<FitReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut train_rng = rng::stream("fit/train", cfg.seed, 0);
    let selection = sampler.draw(&mut rng::stream("fit/selection", cfg.seed, 0), cfg.selection);
    if cfg.init_offset {
        let pred = predict_chunked(model, &selection.0)?;
        let n = pred.len() as f64;
        let gap = selection.1.iter().sum::<f64>() / n - pred.iter().sum::<f64>() / n;
        if gap.is_finite() {
            model.shift_output(gap);
        }
    }
    let mut adam = Adam::with_lr(cfg.lr);
    let mut best: (f64, usize, ParamStore) = (mse(model, &selection)?, 0, model.store.clone());
    let mut evals = vec![(0, best.0)];
    let mut streak = 0;
    for step in 1..=cfg.iterations {
        let (x, y) = sampler.draw(&mut train_rng, cfg.batch);
        let loss = mse_step(model, &mut adam, &x, &y)?;
        if loss.is_finite() {
            streak = 0;
        } else {
            streak += 1;
            if streak > cfg.max_nonfinite {
                return Err(Error::Diverged(format!(
                    "{streak} consecutive non-finite losses at step {step}; best selection MSE {:.3e} at step {}",
                    best.0, best.1
                )));
            }
        }
        if step % cfg.eval_every == 0 || step == cfg.iterations {
            let v = mse(model, &selection)?;
            evals.push((step, v));
            if v < best.0 {
                best = (v, step, model.store.clone());
            }
        }
    }
    model.store = best.2;
    model.refresh_boxes();
    let validation = sampler.draw(&mut rng::stream("fit/validation", cfg.seed, 0), cfg.validation);
    Ok(FitReport {
        val_mse: mse(model, &validation)?,
        best_step: best.1,
        evals,
        iterations: cfg.iterations,
        skipped: adam.skipped(),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Fits `target` on uniform inputs over `domain`.
pub fn mse_fit(
    model: &mut Model,
    target: &(dyn Fn(&[f64]) -> f64 + Sync),
    domain: &Hypercube,
    cfg: &FitConfig,
) -> Result<FitReport> {
    if domain.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: domain.dim() });
    }
    fit(model, &mut UniformTarget { domain: domain.clone(), target }, cfg)
}

/// `(x, |f(x) - model(x)|)` on `n` evenly spaced points of a 1D domain.
pub fn error_profile(model: &Model, target: &dyn Fn(&[f64]) -> f64, lo: f64, hi: f64, n: usize) -> Result<Vec<(f64, f64)>> {
    if model.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: model.dim() });
    }
    let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64).collect();
    let f = model.predict(&xs)?;
    Ok(xs.iter().zip(f).map(|(&x, v)| (x, (target(&[x]) - v).abs())).collect())
}

/// Mean absolute error near the centre of `[lo, hi]` against the mean at
/// its two ends, each taken over a tenth of the width.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CenterEdgeRatio {
    pub center: f64,
    pub edge: f64,
    pub ratio: f64,
}

pub fn center_edge_ratio(profile: &[(f64, f64)]) -> CenterEdgeRatio {
    let lo = profile.first().map_or(0.0, |p| p.0);
    let hi = profile.last().map_or(0.0, |p| p.0);
    let w = hi - lo;
    let mid = 0.5 * (lo + hi);
    let mean = |keep: &dyn Fn(f64) -> bool| {
        let v: Vec<f64> = profile.iter().filter(|p| keep(p.0)).map(|p| p.1).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    let center = mean(&|x| (x - mid).abs() <= 0.05 * w);
    let edge = mean(&|x| x <= lo + 0.05 * w || x >= hi - 0.05 * w);
    CenterEdgeRatio { center, edge, ratio: center / edge }
}
