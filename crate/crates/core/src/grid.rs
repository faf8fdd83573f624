//! One-dimensional lattices and axis-aligned boxes.
//!
//! Adaptive lattices place their vertices at normalized running sums of
//! positive cell weights `e_k = softplus(raw_k) + E_FLOOR`, so no cell can
//! collapse and the endpoints stay pinned to the interval.

use serde::{Deserialize, Serialize};

use crate::autodiff::{softplus, Tape, Tensor, Var};
use crate::{Error, Result};

/// Lower bound added to every adaptive cell weight.
pub const E_FLOOR: f64 = 1e-3;

/// Axis-aligned box `[lower_i, upper_i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypercube {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Hypercube {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch { expected: lower.len(), got: upper.len() });
        }
        for (&lo, &hi) in lower.iter().zip(&upper) {
            if !(lo <= hi) {
                return Err(Error::InvalidInterval { lo, hi });
            }
        }
        Ok(Hypercube { lower, upper })
    }

    /// `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn is_degenerate(&self) -> bool {
        (0..self.dim()).any(|i| self.width(i) <= 0.0)
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        self.check_dim(x.len())?;
        Ok(x.iter().enumerate().all(|(i, &v)| self.lower[i] <= v && v <= self.upper[i]))
    }

    /// Nearest point of the box.
    pub fn clamp(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        Ok(x.iter().enumerate().map(|(i, &v)| v.clamp(self.lower[i], self.upper[i])).collect())
    }

    /// Interval sum `[a + c, b + d]` per coordinate.
    pub fn add(&self, other: &Hypercube) -> Result<Hypercube> {
        self.check_dim(other.dim())?;
        Ok(Hypercube {
            lower: self.lower.iter().zip(&other.lower).map(|(a, b)| a + b).collect(),
            upper: self.upper.iter().zip(&other.upper).map(|(a, b)| a + b).collect(),
        })
    }

    /// Grows every side by `fraction` of its width.
    pub fn inflate(&self, fraction: f64) -> Hypercube {
        let mut out = self.clone();
        for i in 0..self.dim() {
            let pad = fraction * self.width(i);
            out.lower[i] -= pad;
            out.upper[i] += pad;
        }
        out
    }

    /// Replaces every degenerate coordinate `[c, c]` by `[c - eps, c + eps]`
    /// with `eps = widen_eps(c)`.
    pub fn widened(&self) -> Hypercube {
        let mut out = self.clone();
        for i in 0..self.dim() {
            let mid = 0.5 * (self.lower[i] + self.upper[i]);
            let eps = widen_eps(mid);
            if self.width(i) < eps {
                out.lower[i] = mid - eps;
                out.upper[i] = mid + eps;
            }
        }
        out
    }

    /// Bounding box of row-major points of width `dim`.
    pub fn bounding(points: &[f64], dim: usize) -> Result<Hypercube> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::EmptySample);
        }
        let mut lower = vec![f64::INFINITY; dim];
        let mut upper = vec![f64::NEG_INFINITY; dim];
        for row in points.chunks(dim) {
            for i in 0..dim {
                lower[i] = lower[i].min(row[i]);
                upper[i] = upper[i].max(row[i]);
            }
        }
        Hypercube::new(lower, upper)
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got });
        }
        Ok(())
    }
}

/// Half-width used when a box side collapses to a point `c`.
pub fn widen_eps(c: f64) -> f64 {
    1e-6 * (1.0 + c.abs())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridMode {
    Fixed,
    Adaptive,
}

/// A lattice `lo = x_0 < x_1 < ... < x_P = hi`.
#[derive(Clone, Debug, PartialEq)]
pub struct Lattice1D {
    pub lo: f64,
    pub hi: f64,
    pub mode: GridMode,
    /// One raw weight per cell; ignored in fixed mode.
    pub raw: Vec<f64>,
}

impl Lattice1D {
    pub fn uniform(lo: f64, hi: f64, p: usize) -> Result<Self> {
        check_interval(lo, hi)?;
        if p == 0 {
            return Err(Error::InvalidSpec("a lattice needs at least one cell".into()));
        }
        Ok(Lattice1D { lo, hi, mode: GridMode::Fixed, raw: vec![0.0; p] })
    }

    pub fn adaptive(lo: f64, hi: f64, raw: Vec<f64>) -> Result<Self> {
        check_interval(lo, hi)?;
        if raw.is_empty() {
            return Err(Error::InvalidSpec("a lattice needs at least one cell".into()));
        }
        Ok(Lattice1D { lo, hi, mode: GridMode::Adaptive, raw })
    }

    pub fn cells(&self) -> usize {
        self.raw.len()
    }

    pub fn vertices(&self) -> Vec<f64> {
        match self.mode {
            GridMode::Fixed => uniform_vertices(self.lo, self.hi, self.cells()),
            GridMode::Adaptive => {
                vertices_from_weights(&self.raw, self.lo, self.hi).expect("validated on construction")
            }
        }
    }

    pub fn locate(&self, x: f64) -> (usize, f64) {
        locate_cell(x, &self.vertices())
    }
}

fn check_interval(lo: f64, hi: f64) -> Result<()> {
    if lo < hi && lo.is_finite() && hi.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInterval { lo, hi })
    }
}

pub fn uniform_vertices(lo: f64, hi: f64, p: usize) -> Vec<f64> {
    (0..=p)
        .map(|i| {
            let u = i as f64 / p as f64;
            lo * (1.0 - u) + hi * u
        })
        .collect()
}

/// Positive cell weights from raw weights.
pub fn cell_weights(raw: &[f64]) -> Vec<f64> {
    raw.iter().map(|&r| softplus(r) + E_FLOOR).collect()
}

/// Vertices `lo + (hi - lo) * (e_1 + ... + e_p) / (e_1 + ... + e_P)`.
pub fn vertices_from_weights(raw: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    check_interval(lo, hi)?;
    if raw.is_empty() {
        return Err(Error::InvalidSpec("a lattice needs at least one cell".into()));
    }
    Ok(vertices_from_cell_weights(&cell_weights(raw), lo, hi))
}

/// Same map taking the positive weights directly.
pub fn vertices_from_cell_weights(e: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut run = Vec::with_capacity(e.len());
    let mut acc = 0.0;
    for &w in e {
        acc += w;
        run.push(acc);
    }
    let total = acc;
    std::iter::once(lo)
        .chain(run.iter().map(|&c| {
            let u = c / total;
            lo * (1.0 - u) + hi * u
        }))
        .collect()
}

/// Raw weight whose cell weight is `e` (`e > E_FLOOR`).
pub fn raw_for_weight(e: f64) -> f64 {
    let s = e - E_FLOOR;
    // inverse softplus
    if s > 30.0 {
        s + (-(-s).exp()).ln_1p()
    } else {
        s.exp_m1().ln()
    }
}

/// Cell index and local coordinate of `x`. Cells are `[x_p, x_{p+1})` with
/// the last one closed; points outside map to the boundary cells with a
/// coordinate below 0 or above 1.
pub fn locate_cell(x: f64, vertices: &[f64]) -> (usize, f64) {
    let c = crate::autodiff::locate(vertices, x);
    (c.c, c.t)
}

/// Records the lattice vertices `[m, P+1]` for `m` intervals `[lo_j, hi_j]`
/// (`lo`, `hi` of shape `[m, 1]`). With `raw` (`[m, P]`) the lattice is
/// adaptive; otherwise uniform.
pub fn tape_vertices(tape: &mut Tape, raw: Option<Var>, lo: Var, hi: Var, p: usize) -> Var {
    let m = tape.shape(lo)[0];
    let u = match raw {
        Some(raw) => {
            let sp = tape.softplus(raw);
            let e = tape.offset(sp, E_FLOOR);
            let run = tape.cumsum(e, 1);
            let total = tape.slice(run, 1, p - 1, p);
            let frac = tape.div(run, total);
            tape.pad_front(frac, 1, 1)
        }
        None => {
            let row: Vec<f64> = (0..=p).map(|i| i as f64 / p as f64).collect();
            tape.constant(Tensor::new(vec![1, p + 1], row).expect("row shape"))
        }
    };
    let one_minus = {
        let neg = tape.neg(u);
        tape.offset(neg, 1.0)
    };
    let left = tape.mul(lo, one_minus);
    let right = tape.mul(hi, u);
    let v = tape.add(left, right);
    debug_assert_eq!(tape.shape(v), &[m, p + 1]);
    v
}
