//! Convex cubic-Hermite functions.
//!
//! Nodal derivatives `a1_p = slope0 + relu(d_1) + ... + relu(d_p)` increase
//! with `p`. On cell `i` of width `D` the value increment is
//! `D/3 * (2 a1_{i-1} + a1_i + sigmoid(g_i) (a1_i - a1_{i-1}))`, which sweeps
//! the interval between `D/3 (2 a1_{i-1} + a1_i)` and `D/3 (a1_{i-1} + 2 a1_i)`
//! where the Hermite cubic stays convex.

use super::p1::cell_widths;
use super::{Layer, Nodal};
use crate::autodiff::{hermite_basis, sigmoid, Binding, Tape, Var};

pub(super) fn nodal(tape: &mut Tape, bind: &Binding, layer: &Layer, verts: Var) -> Nodal {
    let p = layer.p;
    let b = bind[layer.ids.b.expect("cubic offset")];
    let bhat = bind[layer.ids.bhat.expect("cubic slope")];
    let d = bind[layer.ids.d.expect("cubic increments")];
    let g = bind[layer.ids.g.expect("cubic gates")];
    let slope0 = if layer.first { bhat } else { tape.relu(bhat) };
    let inc = tape.relu(d);
    let run = tape.cumsum(inc, 1);
    let run = tape.pad_front(run, 1, 1);
    let a1 = tape.add(slope0, run);

    let prev = tape.slice(a1, 1, 0, p);
    let next = tape.slice(a1, 1, 1, p + 1);
    let gate = tape.sigmoid(g);
    let spread = tape.sub(next, prev);
    let gated = tape.mul(gate, spread);
    let twice = tape.scale(prev, 2.0);
    let base = tape.add(twice, next);
    let sum = tape.add(base, gated);
    let widths = cell_widths(tape, verts, p);
    let widths = tape.scale(widths, 1.0 / 3.0);
    let rises = tape.mul(sum, widths);
    let heights = tape.cumsum(rises, 1);
    let heights = tape.pad_front(heights, 1, 1);
    let a0 = tape.add(b, heights);
    Nodal { verts, a0, a1: Some(a1) }
}

/// Nodal values and derivatives of one convex cubic function, computed
/// directly from the recursion.
pub fn cubic_nodal_values(
    b: f64,
    bhat: f64,
    d: &[f64],
    g: &[f64],
    vertices: &[f64],
    first: bool,
) -> (Vec<f64>, Vec<f64>) {
    let p = vertices.len() - 1;
    assert_eq!(d.len(), p);
    assert_eq!(g.len(), p);
    let mut a1 = vec![if first { bhat } else { bhat.max(0.0) }];
    for i in 0..p {
        let last = a1[i];
        a1.push(last + d[i].max(0.0));
    }
    let mut a0 = vec![b];
    for i in 1..=p {
        let w = vertices[i] - vertices[i - 1];
        let rise = w / 3.0 * (2.0 * a1[i - 1] + a1[i] + sigmoid(g[i - 1]) * (a1[i] - a1[i - 1]));
        let last = a0[i - 1];
        a0.push(last + rise);
    }
    (a0, a1)
}

/// Value and derivative of the Hermite patch on `[x0, x1]` with end values
/// `v0, v1` and end slopes `s0, s1`, evaluated at `x`.
pub fn hermite_patch(x: f64, x0: f64, x1: f64, v0: f64, v1: f64, s0: f64, s1: f64) -> (f64, f64) {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let [h00, h10, h01, h11] = hermite_basis(t);
    let value = v0 * h00 + h * s0 * h10 + v1 * h01 + h * s1 * h11;
    let t2 = t * t;
    let slope = (v0 * (6.0 * t2 - 6.0 * t) + v1 * (-6.0 * t2 + 6.0 * t)) / h
        + s0 * (3.0 * t2 - 4.0 * t + 1.0)
        + s1 * (3.0 * t2 - 2.0 * t);
    (value, slope)
}
