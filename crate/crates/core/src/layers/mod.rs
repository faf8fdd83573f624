//! Convex KAN layers and the unconstrained P1 layer.
//!
//! A layer with `m` inputs and `q` outputs holds one lattice per input and
//! `m * q` one-dimensional functions. Every function is represented by
//! nodal tables of shape `[m, P+1, q]`; the tables, the lattice vertices and
//! the image box are all recorded on the tape so that gradients reach the
//! slope increments, gate logits and grid weights alike.

mod cubic;
mod p1;

pub use cubic::{cubic_nodal_values, hermite_patch};
pub use p1::{p1_nodal_values, shape_values};

use rand::Rng;
use rand_distr::Uniform;

use crate::autodiff::{
    Binding, Extremum, ParamId, ParamStore, SplineBasis, SplineOutput, Tape, Tensor, Var,
};
use crate::grid::{tape_vertices, widen_eps, Hypercube};
use crate::{Error, Result};

/// A box whose bounds live on a tape as `[m, 1]` columns.
#[derive(Clone, Copy, Debug)]
pub struct TapeBox {
    pub lo: Var,
    pub hi: Var,
}

impl TapeBox {
    pub fn constant(tape: &mut Tape, cube: &Hypercube) -> TapeBox {
        let m = cube.dim();
        let lo = tape.constant(Tensor::new(vec![m, 1], cube.lower.clone()).expect("box shape"));
        let hi = tape.constant(Tensor::new(vec![m, 1], cube.upper.clone()).expect("box shape"));
        TapeBox { lo, hi }
    }

    pub fn dim(&self, tape: &Tape) -> usize {
        tape.shape(self.lo)[0]
    }

    pub fn read(&self, tape: &Tape) -> Hypercube {
        Hypercube { lower: tape.data(self.lo).to_vec(), upper: tape.data(self.hi).to_vec() }
    }

    /// Interval sum.
    pub fn add(&self, tape: &mut Tape, other: &TapeBox) -> TapeBox {
        TapeBox { lo: tape.add(self.lo, other.lo), hi: tape.add(self.hi, other.hi) }
    }

    /// Degenerate sides `[c, c]` become `[c - eps, c + eps]`; other sides
    /// pass through untouched. The selection mask is a constant.
    pub fn widened(&self, tape: &mut Tape) -> TapeBox {
        let cube = self.read(tape);
        let m = cube.dim();
        let mut mask = vec![0.0; m];
        let mut eps = vec![0.0; m];
        for i in 0..m {
            let mid = 0.5 * (cube.lower[i] + cube.upper[i]);
            eps[i] = widen_eps(mid);
            if cube.width(i) < eps[i] {
                mask[i] = 1.0;
            }
        }
        if mask.iter().all(|&v| v == 0.0) {
            return *self;
        }
        let col = |tape: &mut Tape, v: Vec<f64>| tape.constant(Tensor::new(vec![m, 1], v).expect("column"));
        let mask_v = col(tape, mask);
        let eps_v = col(tape, eps);
        let sum = tape.add(self.lo, self.hi);
        let mid = tape.scale(sum, 0.5);
        let lo_target = tape.sub(mid, eps_v);
        let hi_target = tape.add(mid, eps_v);
        let shift = |tape: &mut Tape, cur: Var, target: Var| {
            let diff = tape.sub(target, cur);
            let masked = tape.mul(diff, mask_v);
            tape.add(cur, masked)
        };
        let lo = shift(tape, self.lo, lo_target);
        let hi = shift(tape, self.hi, hi_target);
        TapeBox { lo, hi }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LayerKind {
    /// Convex piecewise-linear functions.
    P1,
    /// Convex cubic-Hermite functions.
    Cubic,
    /// Unconstrained piecewise-linear functions.
    Kan,
}

/// Parameter handles of one layer. Which ones are present depends on the
/// kind: convex layers use `b`, `bhat`, `d` (and `g` for cubic), the
/// unconstrained layer uses `a`. `raw` is present on adaptive lattices.
#[derive(Clone, Debug)]
pub struct LayerIds {
    pub b: Option<ParamId>,
    pub bhat: Option<ParamId>,
    pub d: Option<ParamId>,
    pub g: Option<ParamId>,
    pub a: Option<ParamId>,
    pub raw: Option<ParamId>,
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub kind: LayerKind,
    pub fan_in: usize,
    pub fan_out: usize,
    pub p: usize,
    /// First convex layer of a network: its slopes may be negative.
    pub first: bool,
    /// Cubic hidden layers cut their output at the lower image bound.
    pub clip: bool,
    pub ids: LayerIds,
}

/// Nodal tables as recorded on the tape.
#[derive(Clone, Copy, Debug)]
pub struct Nodal {
    /// `[m, P+1]`
    pub verts: Var,
    /// values `[m, P+1, q]`
    pub a0: Var,
    /// derivatives `[m, P+1, q]` (cubic only)
    pub a1: Option<Var>,
}

/// Output of one layer on a batch.
#[derive(Clone, Copy, Debug)]
pub struct LayerPass {
    /// `[B, q]`
    pub y: Var,
    pub image: TapeBox,
    /// `[B, m, q]`: derivative of output `k` in input `j`.
    pub jac: Option<Var>,
}

/// Nodal tables read back as plain arrays, same layouts as [`Nodal`].
#[derive(Clone, Debug)]
pub struct NodalTable {
    pub verts: Vec<f64>,
    pub a0: Vec<f64>,
    pub a1: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LayerOptions {
    pub adapt: bool,
    /// Draw raw grid weights from U(-0.5, 0.5) instead of starting uniform.
    pub random_grid: bool,
}

impl Layer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        kind: LayerKind,
        store: &mut ParamStore,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        p: usize,
        first: bool,
        opts: LayerOptions,
        rng: &mut R,
    ) -> Result<Layer> {
        if fan_in == 0 || fan_out == 0 {
            return Err(Error::InvalidSpec(format!("layer {prefix} has zero width")));
        }
        if p == 0 {
            return Err(Error::InvalidSpec(format!("layer {prefix} needs P >= 1")));
        }
        let (m, q) = (fan_in, fan_out);
        let draw = |shape: Vec<usize>, lo: f64, hi: f64, rng: &mut R| {
            let n: usize = shape.iter().product();
            let data = if hi > lo {
                let dist = Uniform::new(lo, hi).expect("valid range");
                (0..n).map(|_| rng.sample(dist)).collect()
            } else {
                vec![lo; n]
            };
            Tensor::new(shape, data).expect("param shape")
        };
        let mut ids = LayerIds { b: None, bhat: None, d: None, g: None, a: None, raw: None };
        match kind {
            LayerKind::P1 | LayerKind::Cubic => {
                ids.b = Some(store.add(format!("{prefix}.b"), draw(vec![m, 1, q], -0.1, 0.1, rng)));
                ids.bhat = Some(store.add(
                    format!("{prefix}.bhat"),
                    draw(vec![m, 1, q], 0.0, 1.0 / m as f64, rng),
                ));
                let nd = if kind == LayerKind::P1 { p - 1 } else { p };
                ids.d = Some(store.add(
                    format!("{prefix}.d"),
                    draw(vec![m, nd, q], 0.0, 0.1 / p as f64, rng),
                ));
                if kind == LayerKind::Cubic {
                    ids.g = Some(store.add(format!("{prefix}.g"), Tensor::zeros(&[m, p, q])));
                }
            }
            LayerKind::Kan => {
                ids.a = Some(store.add(format!("{prefix}.a"), draw(vec![m, p + 1, q], -0.1, 0.1, rng)));
            }
        }
        if opts.adapt {
            let raw = if opts.random_grid {
                draw(vec![m, p], -0.5, 0.5, rng)
            } else {
                Tensor::zeros(&[m, p])
            };
            ids.raw = Some(store.add(format!("{prefix}.raw"), raw));
        }
        Ok(Layer { kind, fan_in, fan_out, p, first, clip: false, ids })
    }

    pub fn adaptive(&self) -> bool {
        self.ids.raw.is_some()
    }

    /// Records the lattice and nodal tables over the box `dom`.
    pub fn nodal(&self, tape: &mut Tape, bind: &Binding, dom: &TapeBox) -> Nodal {
        let dom = dom.widened(tape);
        let verts = tape_vertices(tape, self.ids.raw.map(|id| bind[id]), dom.lo, dom.hi, self.p);
        match self.kind {
            LayerKind::P1 => p1::nodal(tape, bind, self, verts),
            LayerKind::Cubic => cubic::nodal(tape, bind, self, verts),
            LayerKind::Kan => Nodal { verts, a0: bind[self.ids.a.expect("kan table")], a1: None },
        }
    }

    /// Image box `[q, 1]` columns from the nodal values.
    pub fn image(&self, tape: &mut Tape, nodal: &Nodal) -> TapeBox {
        let q = self.fan_out;
        let a = nodal.a0;
        let low = tape.reduce_axis(a, 1, Extremum::Min);
        let high = match self.kind {
            // convex functions peak at an end of the interval
            LayerKind::P1 | LayerKind::Cubic => {
                let first = tape.slice(a, 1, 0, 1);
                let last = tape.slice(a, 1, self.p, self.p + 1);
                tape.maximum(first, last)
            }
            LayerKind::Kan => tape.reduce_axis(a, 1, Extremum::Max),
        };
        let lo = tape.sum_axis(low, 0);
        let hi = tape.sum_axis(high, 0);
        TapeBox { lo: tape.reshape(lo, &[q, 1]), hi: tape.reshape(hi, &[q, 1]) }
    }

    /// Applies the layer to `x` (`[B, m]`) whose lattice spans `dom`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        x: Var,
        dom: &TapeBox,
        want_jac: bool,
    ) -> Result<LayerPass> {
        let xs = tape.shape(x);
        if xs.len() != 2 || xs[1] != self.fan_in {
            return Err(Error::DimensionMismatch { expected: self.fan_in, got: *xs.last().unwrap_or(&0) });
        }
        if dom.dim(tape) != self.fan_in {
            return Err(Error::DimensionMismatch { expected: self.fan_in, got: dom.dim(tape) });
        }
        let bsz = xs[0];
        let nodal = self.nodal(tape, bind, dom);
        let image = self.image(tape, &nodal);
        let basis = match self.kind {
            LayerKind::Cubic => SplineBasis::Hermite,
            _ => SplineBasis::Linear,
        };
        let mut y = tape.spline(basis, SplineOutput::Value, x, nodal.verts, nodal.a0, nodal.a1)?;
        let mut jac = if want_jac {
            Some(tape.spline(basis, SplineOutput::Slope, x, nodal.verts, nodal.a0, nodal.a1)?)
        } else {
            None
        };
        if self.clip {
            let floor = tape.reshape(image.lo, &[1, self.fan_out]);
            let raw = y;
            y = tape.maximum(raw, floor);
            if let Some(j) = jac {
                // the max routes to the unclipped value on ties
                let yv = tape.data(raw);
                let fv = tape.data(floor).to_vec();
                let keep: Vec<f64> = yv
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| if v >= fv[i % self.fan_out] { 1.0 } else { 0.0 })
                    .collect();
                let mask = tape.constant(Tensor::new(vec![bsz, 1, self.fan_out], keep)?);
                jac = Some(tape.mul(j, mask));
            }
        }
        Ok(LayerPass { y, image, jac })
    }

    /// Numeric evaluation on a row-major batch, returning outputs and the
    /// image box.
    pub fn evaluate(&self, store: &ParamStore, x: &[f64], dom: &Hypercube) -> Result<(Vec<f64>, Hypercube)> {
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape, false);
        let bsz = x.len() / self.fan_in.max(1);
        let xv = tape.constant(Tensor::new(vec![bsz, self.fan_in], x.to_vec())?);
        let d = TapeBox::constant(&mut tape, dom);
        let pass = self.forward(&mut tape, &bind, xv, &d, false)?;
        Ok((tape.data(pass.y).to_vec(), pass.image.read(&tape)))
    }

    /// Nodal tables over `dom` as plain arrays.
    pub fn nodal_table(&self, store: &ParamStore, dom: &Hypercube) -> NodalTable {
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape, false);
        let d = TapeBox::constant(&mut tape, dom);
        let n = self.nodal(&mut tape, &bind, &d);
        NodalTable {
            verts: tape.data(n.verts).to_vec(),
            a0: tape.data(n.a0).to_vec(),
            a1: n.a1.map(|v| tape.data(v).to_vec()),
        }
    }
}

impl NodalTable {
    /// Vertices of input `j`.
    pub fn vertices(&self, j: usize, p: usize) -> &[f64] {
        &self.verts[j * (p + 1)..(j + 1) * (p + 1)]
    }

    /// Nodal values (or derivatives) of function `(j, k)` from a table of
    /// shape `[m, P+1, q]`.
    pub fn column(table: &[f64], j: usize, k: usize, p: usize, q: usize) -> Vec<f64> {
        (0..=p).map(|i| table[(j * (p + 1) + i) * q + k]).collect()
    }
}

#[cfg(test)]
mod tests;
