//! Fused kernels for batches of one-dimensional piecewise functions.
//!
//! A layer with `m` inputs and `q` outputs owns `m * q` functions sharing one
//! lattice per input. Recording them as elementwise tape nodes would cost a
//! handful of `[B, m, P+1, q]` intermediates per layer; these kernels keep only
//! the per-(sample, input) cell index and local coordinate.

use super::tape::{slot, Tape, Var};
use super::tensor::Tensor;
use super::TapeError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplineBasis {
    /// Continuous piecewise linear interpolation of nodal values. Outside the
    /// lattice the first/last piece is continued.
    Linear,
    /// Cubic Hermite interpolation of nodal values and nodal derivatives.
    /// Outside the lattice the function continues along its boundary tangent.
    Hermite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplineOutput {
    /// `[B, q]`: sum over inputs of the function values.
    Value,
    /// `[B, m, q]`: derivative of each function at its input.
    Slope,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Region {
    Left,
    Inside,
    Right,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Cell {
    pub c: usize,
    pub t: f64,
    pub h: f64,
    pub region: Region,
}

#[derive(Debug)]
pub(crate) struct SplineOp {
    basis: SplineBasis,
    output: SplineOutput,
    x: Var,
    verts: Var,
    a0: Var,
    a1: Option<Var>,
    dims: (usize, usize, usize, usize),
    cells: Vec<Cell>,
}

/// Cubic Hermite basis `(h00, h10, h01, h11)` at `t`.
pub fn hermite_basis(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [2.0 * t3 - 3.0 * t2 + 1.0, t3 - 2.0 * t2 + t, -2.0 * t3 + 3.0 * t2, t3 - t2]
}

fn hermite_d1(t: f64) -> [f64; 4] {
    let t2 = t * t;
    [6.0 * t2 - 6.0 * t, 3.0 * t2 - 4.0 * t + 1.0, -6.0 * t2 + 6.0 * t, 3.0 * t2 - 2.0 * t]
}

fn hermite_d2(t: f64) -> [f64; 4] {
    [12.0 * t - 6.0, 6.0 * t - 4.0, -12.0 * t + 6.0, 6.0 * t - 2.0]
}

/// Cell of `x` in the sorted vertex row `v` (length `P + 1`). The last cell
/// is closed on the right; points beyond either end map to the boundary
/// cell with `t` outside `[0, 1]`.
pub(crate) fn locate(v: &[f64], x: f64) -> Cell {
    let p = v.len() - 1;
    let c = v[1..p].partition_point(|&u| u <= x);
    let h = v[c + 1] - v[c];
    let t = (x - v[c]) / h;
    let region = if x < v[0] {
        Region::Left
    } else if x > v[p] {
        Region::Right
    } else {
        Region::Inside
    };
    Cell { c, t, h, region }
}

pub(crate) fn forward(
    tape: &Tape,
    basis: SplineBasis,
    output: SplineOutput,
    x: Var,
    verts: Var,
    a0: Var,
    a1: Option<Var>,
) -> Result<(Tensor, SplineOp), TapeError> {
    let xs = tape.shape(x);
    let vs = tape.shape(verts);
    let s0 = tape.shape(a0);
    let bad = |msg: String| Err(TapeError::ShapeMismatch(msg));
    if xs.len() != 2 || vs.len() != 2 || s0.len() != 3 {
        return bad(format!("spline operands {xs:?}, {vs:?}, {s0:?}"));
    }
    let (bsz, m) = (xs[0], xs[1]);
    let np = vs[1];
    let q = s0[2];
    if vs[0] != m || s0[0] != m || s0[1] != np || np < 2 {
        return bad(format!("spline operands {xs:?}, {vs:?}, {s0:?}"));
    }
    match (basis, a1) {
        (SplineBasis::Hermite, Some(a1)) => {
            if tape.shape(a1) != s0 {
                return bad(format!("derivative table {:?} vs {s0:?}", tape.shape(a1)));
            }
        }
        (SplineBasis::Hermite, None) => {
            return bad("cubic pieces need nodal derivatives".into());
        }
        (SplineBasis::Linear, Some(_)) => {
            return bad("linear pieces take no nodal derivatives".into());
        }
        (SplineBasis::Linear, None) => {}
    }

    let xd = tape.data(x);
    let vd = tape.data(verts);
    let d0 = tape.data(a0);
    let d1 = a1.map(|v| tape.data(v));
    let mut cells = Vec::with_capacity(bsz * m);
    for b in 0..bsz {
        for j in 0..m {
            cells.push(locate(&vd[j * np..(j + 1) * np], xd[b * m + j]));
        }
    }

    let out_len = match output {
        SplineOutput::Value => bsz * q,
        SplineOutput::Slope => bsz * m * q,
    };
    let mut out = vec![0.0; out_len];
    for b in 0..bsz {
        for j in 0..m {
            let cell = cells[b * m + j];
            let dst = match output {
                SplineOutput::Value => &mut out[b * q..(b + 1) * q],
                SplineOutput::Slope => &mut out[(b * m + j) * q..(b * m + j + 1) * q],
            };
            let row = |p: usize| (j * np + p) * q;
            match basis {
                SplineBasis::Linear => {
                    let ia = row(cell.c);
                    let ib = ia + q;
                    let (wa, wb) = match output {
                        SplineOutput::Value => (1.0 - cell.t, cell.t),
                        SplineOutput::Slope => (-1.0 / cell.h, 1.0 / cell.h),
                    };
                    blend(dst, wa, &d0[ia..ib], wb, &d0[ib..ib + q]);
                }
                SplineBasis::Hermite => {
                    let d1 = d1.expect("checked above");
                    match cell.region {
                        Region::Left | Region::Right => {
                            let (p, edge) = if cell.region == Region::Left {
                                (0, vd[j * np])
                            } else {
                                (np - 1, vd[j * np + np - 1])
                            };
                            let i = row(p);
                            let dx = xd[b * m + j] - edge;
                            for k in 0..q {
                                dst[k] += match output {
                                    SplineOutput::Value => d0[i + k] + d1[i + k] * dx,
                                    SplineOutput::Slope => d1[i + k],
                                };
                            }
                        }
                        Region::Inside => {
                            let ia = row(cell.c);
                            let ib = ia + q;
                            let h = cell.h;
                            let w = match output {
                                SplineOutput::Value => {
                                    let [h00, h10, h01, h11] = hermite_basis(cell.t);
                                    [h00, h * h10, h01, h * h11]
                                }
                                SplineOutput::Slope => {
                                    let [h00, h10, h01, h11] = hermite_d1(cell.t);
                                    [h00 / h, h10, h01 / h, h11]
                                }
                            };
                            for k in 0..q {
                                dst[k] += w[0] * d0[ia + k]
                                    + w[1] * d1[ia + k]
                                    + w[2] * d0[ib + k]
                                    + w[3] * d1[ib + k];
                            }
                        }
                    }
                }
            }
        }
    }
    let shape = match output {
        SplineOutput::Value => vec![bsz, q],
        SplineOutput::Slope => vec![bsz, m, q],
    };
    let op = SplineOp { basis, output, x, verts, a0, a1, dims: (bsz, m, np, q), cells };
    Ok((Tensor::from_parts(shape, out), op))
}

/// `dst += wa * a + wb * b`
#[inline(never)]
fn blend(dst: &mut [f64], wa: f64, a: &[f64], wb: f64, b: &[f64]) {
    let n = dst.len();
    let (a, b) = (&a[..n], &b[..n]);
    for k in 0..n {
        dst[k] += wa * a[k] + wb * b[k];
    }
}

/// `ga += wa * u`, `gb += wb * u`
#[inline(never)]
fn spread(ga: &mut [f64], wa: f64, gb: &mut [f64], wb: f64, u: &[f64]) {
    let n = u.len();
    let (ga, gb) = (&mut ga[..n], &mut gb[..n]);
    for k in 0..n {
        ga[k] += u[k] * wa;
        gb[k] += u[k] * wb;
    }
}

/// `sum_k u[k] * (b[k] - a[k])` over four running sums.
fn dot_diff(u: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let n = u.len() / 4 * 4;
    for ((u, a), b) in u[..n].chunks_exact(4).zip(a[..n].chunks_exact(4)).zip(b[..n].chunks_exact(4)) {
        for l in 0..4 {
            acc[l] += u[l] * (b[l] - a[l]);
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in n..u.len() {
        s += u[k] * (b[k] - a[k]);
    }
    s
}

pub(crate) fn backward(tape: &Tape, op: &SplineOp, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
    let (bsz, m, np, q) = op.dims;
    let want_x = tape.requires_grad(op.x);
    let want_v = tape.requires_grad(op.verts);
    let want_0 = tape.requires_grad(op.a0);
    let want_1 = op.a1.is_some_and(|v| tape.requires_grad(v));
    let mut gx = vec![0.0; if want_x { bsz * m } else { 0 }];
    let mut gv = vec![0.0; if want_v { m * np } else { 0 }];
    let mut g0 = vec![0.0; if want_0 { m * np * q } else { 0 }];
    let mut g1 = vec![0.0; if want_1 { m * np * q } else { 0 }];

    let xd = tape.data(op.x);
    let vd = tape.data(op.verts);
    let d0 = tape.data(op.a0);
    let d1 = op.a1.map(|v| tape.data(v));

    for b in 0..bsz {
        for j in 0..m {
            let cell = op.cells[b * m + j];
            let up = match op.output {
                SplineOutput::Value => &g[b * q..(b + 1) * q],
                SplineOutput::Slope => &g[(b * m + j) * q..(b * m + j + 1) * q],
            };
            let ia = (j * np + cell.c) * q;
            let ib = ia + q;
            let h = cell.h;
            let t = cell.t;
            // adjoints of the local coordinate and of the cell width at fixed t
            let mut st = 0.0;
            let mut sh = 0.0;
            match (op.basis, op.output) {
                (SplineBasis::Linear, SplineOutput::Value) => {
                    st = dot_diff(up, &d0[ia..ib], &d0[ib..ib + q]);
                    if want_0 {
                        let (ga, gb) = g0[ia..ib + q].split_at_mut(q);
                        spread(ga, 1.0 - t, gb, t, up);
                    }
                }
                (SplineBasis::Linear, SplineOutput::Slope) => {
                    for k in 0..q {
                        sh -= up[k] * (d0[ib + k] - d0[ia + k]) / (h * h);
                    }
                    if want_0 {
                        for k in 0..q {
                            g0[ia + k] -= up[k] / h;
                            g0[ib + k] += up[k] / h;
                        }
                    }
                }
                (SplineBasis::Hermite, out) if cell.region != Region::Inside => {
                    let d1 = d1.expect("checked in forward");
                    let p = if cell.region == Region::Left { 0 } else { np - 1 };
                    let i = (j * np + p) * q;
                    let edge = vd[j * np + p];
                    let dx = xd[b * m + j] - edge;
                    match out {
                        SplineOutput::Value => {
                            let mut s = 0.0;
                            for k in 0..q {
                                s += up[k] * d1[i + k];
                            }
                            if want_x {
                                gx[b * m + j] += s;
                            }
                            if want_v {
                                gv[j * np + p] -= s;
                            }
                            if want_0 {
                                for k in 0..q {
                                    g0[i + k] += up[k];
                                }
                            }
                            if want_1 {
                                for k in 0..q {
                                    g1[i + k] += up[k] * dx;
                                }
                            }
                        }
                        SplineOutput::Slope => {
                            if want_1 {
                                for k in 0..q {
                                    g1[i + k] += up[k];
                                }
                            }
                        }
                    }
                    continue;
                }
                (SplineBasis::Hermite, SplineOutput::Value) => {
                    let d1 = d1.expect("checked in forward");
                    let [h00, h10, h01, h11] = hermite_basis(t);
                    let [p00, p10, p01, p11] = hermite_d1(t);
                    for k in 0..q {
                        let (a0, a1, b0, b1) = (d0[ia + k], d1[ia + k], d0[ib + k], d1[ib + k]);
                        st += up[k] * (a0 * p00 + b0 * p01 + h * (a1 * p10 + b1 * p11));
                        sh += up[k] * (a1 * h10 + b1 * h11);
                    }
                    if want_0 {
                        for k in 0..q {
                            g0[ia + k] += up[k] * h00;
                            g0[ib + k] += up[k] * h01;
                        }
                    }
                    if want_1 {
                        for k in 0..q {
                            g1[ia + k] += up[k] * h * h10;
                            g1[ib + k] += up[k] * h * h11;
                        }
                    }
                }
                (SplineBasis::Hermite, SplineOutput::Slope) => {
                    let d1 = d1.expect("checked in forward");
                    let [p00, p10, p01, p11] = hermite_d1(t);
                    let [q00, q10, q01, q11] = hermite_d2(t);
                    for k in 0..q {
                        let (a0, a1, b0, b1) = (d0[ia + k], d1[ia + k], d0[ib + k], d1[ib + k]);
                        st += up[k] * ((a0 * q00 + b0 * q01) / h + a1 * q10 + b1 * q11);
                        sh -= up[k] * (a0 * p00 + b0 * p01) / (h * h);
                    }
                    if want_0 {
                        for k in 0..q {
                            g0[ia + k] += up[k] * p00 / h;
                            g0[ib + k] += up[k] * p01 / h;
                        }
                    }
                    if want_1 {
                        for k in 0..q {
                            g1[ia + k] += up[k] * p10;
                            g1[ib + k] += up[k] * p11;
                        }
                    }
                }
            }
            if want_x {
                gx[b * m + j] += st / h;
            }
            if want_v {
                gv[j * np + cell.c] += st * (t - 1.0) / h - sh;
                gv[j * np + cell.c + 1] += -st * t / h + sh;
            }
        }
    }

    let mut flush = |v: Var, buf: Vec<f64>| {
        let dst = slot(adj, v, buf.len());
        for (d, s) in dst.iter_mut().zip(&buf) {
            *d += s;
        }
    };
    if want_x {
        flush(op.x, gx);
    }
    if want_v {
        flush(op.verts, gv);
    }
    if want_0 {
        flush(op.a0, g0);
    }
    if want_1 {
        flush(op.a1.expect("present when wanted"), g1);
    }
}
