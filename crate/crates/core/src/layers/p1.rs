//! Convex piecewise-linear functions.
//!
//! On cell `s` the slope is `s_s = slope0 + relu(d_1) + ... + relu(d_{s-1})`,
//! so slopes never decrease; `slope0` is `bhat` on the first layer and
//! `relu(bhat)` afterwards, which also makes later layers nondecreasing.

use super::{Layer, Nodal};
use crate::autodiff::{Binding, Tape, Var};

pub(super) fn nodal(tape: &mut Tape, bind: &Binding, layer: &Layer, verts: Var) -> Nodal {
    let p = layer.p;
    let b = bind[layer.ids.b.expect("p1 offset")];
    let bhat = bind[layer.ids.bhat.expect("p1 slope")];
    let d = bind[layer.ids.d.expect("p1 increments")];
    let slope0 = if layer.first { bhat } else { tape.relu(bhat) };
    let inc = tape.relu(d);
    let run = tape.cumsum(inc, 1);
    let run = tape.pad_front(run, 1, 1);
    let slopes = tape.add(slope0, run);
    let widths = cell_widths(tape, verts, p);
    let rises = tape.mul(slopes, widths);
    let heights = tape.cumsum(rises, 1);
    let heights = tape.pad_front(heights, 1, 1);
    let a0 = tape.add(b, heights);
    Nodal { verts, a0, a1: None }
}

/// `[m, P, 1]` cell widths of a `[m, P+1]` vertex table.
pub(super) fn cell_widths(tape: &mut Tape, verts: Var, p: usize) -> Var {
    let m = tape.shape(verts)[0];
    let right = tape.slice(verts, 1, 1, p + 1);
    let left = tape.slice(verts, 1, 0, p);
    let w = tape.sub(right, left);
    tape.reshape(w, &[m, p, 1])
}

/// Hat-function values `(Psi_0(x), ..., Psi_P(x))` on the given vertices.
/// Outside the lattice the two boundary hats continue linearly.
pub fn shape_values(x: f64, vertices: &[f64]) -> Vec<f64> {
    let (c, t) = crate::grid::locate_cell(x, vertices);
    let mut psi = vec![0.0; vertices.len()];
    psi[c] = 1.0 - t;
    psi[c + 1] = t;
    psi
}

/// Nodal values of one convex piecewise-linear function, computed directly
/// from the slope recursion.
pub fn p1_nodal_values(b: f64, bhat: f64, d: &[f64], vertices: &[f64], first: bool) -> Vec<f64> {
    let p = vertices.len() - 1;
    assert_eq!(d.len(), p - 1, "P1 functions take P-1 slope increments");
    let mut slope = if first { bhat } else { bhat.max(0.0) };
    let mut a = vec![b];
    for s in 1..=p {
        if s > 1 {
            slope += d[s - 2].max(0.0);
        }
        let prev = a[s - 1];
        a.push(prev + slope * (vertices[s] - vertices[s - 1]));
    }
    a
}
