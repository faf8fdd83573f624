//! Append-only computation record with a single reverse sweep.
//!
//! Every node stores its forward value and the operation that produced it.
//! Parents always precede children, so the reverse sweep is a single pass
//! from the seed back to the first node.
//!
//! Subgradient conventions: `max(u, c)` has derivative 0 at `u = c`, the
//! binary `max`/`min` route the whole adjoint to the first argument on ties,
//! and the axis reductions route to the first extremal index.

use super::spline::{self, SplineBasis, SplineOp, SplineOutput};
use super::tensor::{axis_split, broadcast_shape, RowPlan, Tensor};
use super::TapeError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryKind {
    Neg,
    Scale(f64),
    Offset(f64),
    /// `max(x, c)`
    MaxConst(f64),
    Sigmoid,
    Softplus,
    Powi(i32),
    Exp,
    Celu(f64),
    /// Derivative of `Celu(alpha)` as a function of its input.
    CeluGrad(f64),
    /// Indicator `x > 0`; carries no gradient.
    Step,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Min,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extremum {
    Min,
    Max,
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Unary { x: Var, kind: UnaryKind },
    Binary { a: Var, b: Var, kind: BinaryKind },
    Sum { x: Var },
    SumAxis { x: Var, axis: usize },
    Reduce { x: Var, arg: Vec<usize> },
    Cumsum { x: Var, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    PadFront { x: Var, axis: usize, count: usize },
    Reshape { x: Var },
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Spline(Box<SplineOp>),
    VecJac { g: Var, jac: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
pub struct Adjoints {
    grads: Vec<Option<Vec<f64>>>,
}

impl Adjoints {
    /// Adjoint of `v`, or `None` if `v` does not influence the output or
    /// does not require gradients.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn unary_value(kind: UnaryKind, x: f64) -> f64 {
    match kind {
        UnaryKind::Neg => -x,
        UnaryKind::Scale(c) => c * x,
        UnaryKind::Offset(c) => x + c,
        UnaryKind::MaxConst(c) => {
            if x > c {
                x
            } else {
                c
            }
        }
        UnaryKind::Sigmoid => sigmoid(x),
        UnaryKind::Softplus => softplus(x),
        UnaryKind::Powi(n) => x.powi(n),
        UnaryKind::Exp => x.exp(),
        UnaryKind::Celu(a) => {
            if x >= 0.0 {
                x
            } else {
                a * ((x / a).exp() - 1.0)
            }
        }
        UnaryKind::CeluGrad(a) => {
            if x >= 0.0 {
                1.0
            } else {
                (x / a).exp()
            }
        }
        UnaryKind::Step => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// d(output)/d(input) for the unary kinds, given input `x` and output `y`.
fn unary_partial(kind: UnaryKind, x: f64, y: f64) -> f64 {
    match kind {
        UnaryKind::Neg => -1.0,
        UnaryKind::Scale(c) => c,
        UnaryKind::Offset(_) => 1.0,
        UnaryKind::MaxConst(c) => {
            if x > c {
                1.0
            } else {
                0.0
            }
        }
        UnaryKind::Sigmoid => y * (1.0 - y),
        UnaryKind::Softplus => sigmoid(x),
        UnaryKind::Powi(0) => 0.0,
        UnaryKind::Powi(n) => n as f64 * x.powi(n - 1),
        UnaryKind::Exp => y,
        UnaryKind::Celu(a) => {
            if x >= 0.0 {
                1.0
            } else {
                (x / a).exp()
            }
        }
        UnaryKind::CeluGrad(a) => {
            if x >= 0.0 {
                0.0
            } else {
                y / a
            }
        }
        UnaryKind::Step => 0.0,
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, parents: &[Var]) -> bool {
        parents.iter().any(|p| self.nodes[p.0].requires_grad)
    }

    fn check(&self, v: Var) -> Result<(), TapeError> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TapeError::InvalidHandle(v.0))
        }
    }

    /// Trainable leaf: adjoints are produced for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: never receives an adjoint.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Records an elementwise operation named by a string, for callers that
    /// drive the tape from data (`"add"`, `"mul"`, `"relu"`, `"sigmoid"`, ...).
    pub fn record_named(&mut self, kind: &str, parents: &[Var]) -> Result<Var, TapeError> {
        for p in parents {
            self.check(*p)?;
        }
        let arity_err = || TapeError::Arity(kind.to_string(), parents.len());
        let unary = |k| -> Result<(UnaryKind, Var), TapeError> {
            match parents {
                [x] => Ok((k, *x)),
                _ => Err(arity_err()),
            }
        };
        let binary = |k| -> Result<(BinaryKind, Var, Var), TapeError> {
            match parents {
                [a, b] => Ok((k, *a, *b)),
                _ => Err(arity_err()),
            }
        };
        match kind {
            "add" | "sub" | "mul" | "div" | "max" | "min" => {
                let k = match kind {
                    "add" => BinaryKind::Add,
                    "sub" => BinaryKind::Sub,
                    "mul" => BinaryKind::Mul,
                    "div" => BinaryKind::Div,
                    "max" => BinaryKind::Max,
                    _ => BinaryKind::Min,
                };
                let (k, a, b) = binary(k)?;
                self.try_binary(k, a, b)
            }
            "neg" | "relu" | "max0" | "sigmoid" | "softplus" | "exp" | "square" | "cube" => {
                let k = match kind {
                    "neg" => UnaryKind::Neg,
                    "relu" | "max0" => UnaryKind::MaxConst(0.0),
                    "sigmoid" => UnaryKind::Sigmoid,
                    "softplus" => UnaryKind::Softplus,
                    "exp" => UnaryKind::Exp,
                    "square" => UnaryKind::Powi(2),
                    _ => UnaryKind::Powi(3),
                };
                let (k, x) = unary(k)?;
                Ok(self.unary(x, k))
            }
            "sum" => {
                let (_, x) = unary(UnaryKind::Neg)?;
                Ok(self.sum(x))
            }
            _ => Err(TapeError::UnknownOp(kind.to_string())),
        }
    }

    pub fn unary(&mut self, x: Var, kind: UnaryKind) -> Var {
        let xv = &self.nodes[x.0].value;
        let data = xv.data().iter().map(|&v| unary_value(kind, v)).collect();
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        let rg = kind != UnaryKind::Step && self.any_grad(&[x]);
        self.push(value, Op::Unary { x, kind }, rg)
    }

    pub fn try_binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var, TapeError> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let shape = broadcast_shape(av.shape(), bv.shape()).ok_or_else(|| {
            TapeError::ShapeMismatch(format!(
                "cannot broadcast {:?} with {:?}",
                av.shape(),
                bv.shape()
            ))
        })?;
        let plan = RowPlan::new(&shape, av.shape(), bv.shape());
        let (x, y) = (av.data(), bv.data());
        let data = match kind {
            BinaryKind::Add => map_rows(&plan, x, y, |x, y| x + y),
            BinaryKind::Sub => map_rows(&plan, x, y, |x, y| x - y),
            BinaryKind::Mul => map_rows(&plan, x, y, |x, y| x * y),
            BinaryKind::Div => map_rows(&plan, x, y, |x, y| x / y),
            BinaryKind::Max => map_rows(&plan, x, y, |x, y| if x >= y { x } else { y }),
            BinaryKind::Min => map_rows(&plan, x, y, |x, y| if x <= y { x } else { y }),
        };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Binary { a, b, kind }, rg))
    }

    /// Panics on incompatible shapes; see [`Tape::try_binary`].
    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Var {
        self.try_binary(kind, a, b).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinaryKind::Max, a, b)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinaryKind::Min, a, b)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Neg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, UnaryKind::Scale(c))
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, UnaryKind::Offset(c))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::MaxConst(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Sigmoid)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Softplus)
    }

    pub fn powi(&mut self, x: Var, n: i32) -> Var {
        self.unary(x, UnaryKind::Powi(n))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Exp)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data().iter().sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.numel().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sums over `axis`, keeping it with length 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        let (outer, n, inner) = axis_split(xv.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..n {
                let src = &xv.data()[(o * n + i) * inner..(o * n + i + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = 1;
        let rg = self.any_grad(&[x]);
        self.push(Tensor::from_parts(shape, out), Op::SumAxis { x, axis }, rg)
    }

    /// Minimum or maximum over `axis` (kept with length 1); ties pick the
    /// first index.
    pub fn reduce_axis(&mut self, x: Var, axis: usize, which: Extremum) -> Var {
        let xv = &self.nodes[x.0].value;
        let (outer, n, inner) = axis_split(xv.shape(), axis);
        assert!(n > 0, "reduction over an empty axis");
        let d = xv.data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut arg = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = o * n * inner;
            let (best, at) = (&mut out, &mut arg);
            let start = best.len();
            best.extend_from_slice(&d[base..base + inner]);
            at.extend(base..base + inner);
            let (best, at) = (&mut best[start..], &mut at[start..]);
            for i in 1..n {
                let row = base + i * inner;
                for (r, &v) in d[row..row + inner].iter().enumerate() {
                    let better = match which {
                        Extremum::Min => v < best[r],
                        Extremum::Max => v > best[r],
                    };
                    if better {
                        best[r] = v;
                        at[r] = row + r;
                    }
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = 1;
        let rg = self.any_grad(&[x]);
        self.push(Tensor::from_parts(shape, out), Op::Reduce { x, arg }, rg)
    }

    /// Inclusive running sum along `axis`.
    pub fn cumsum(&mut self, x: Var, axis: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        let (outer, n, inner) = axis_split(xv.shape(), axis);
        let mut out = xv.data().to_vec();
        for o in 0..outer {
            for i in 1..n {
                let (prev, cur) = out.split_at_mut((o * n + i) * inner);
                let prev = &prev[(o * n + i - 1) * inner..];
                for (c, p) in cur[..inner].iter_mut().zip(prev) {
                    *c += p;
                }
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::from_parts(shape, out), Op::Cumsum { x, axis }, rg)
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        let (outer, n, inner) = axis_split(xv.shape(), axis);
        assert!(start <= end && end <= n, "slice {start}..{end} out of range {n}");
        let len = end - start;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&xv.data()[(o * n + start) * inner..(o * n + end) * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let rg = self.any_grad(&[x]);
        self.push(Tensor::from_parts(shape, out), Op::Slice { x, axis, start }, rg)
    }

    /// Prepends `count` zeros along `axis`.
    pub fn pad_front(&mut self, x: Var, axis: usize, count: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        let (outer, n, inner) = axis_split(xv.shape(), axis);
        let mut out = Vec::with_capacity(outer * (n + count) * inner);
        for o in 0..outer {
            out.extend(std::iter::repeat_n(0.0, count * inner));
            out.extend_from_slice(&xv.data()[o * n * inner..(o + 1) * n * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = n + count;
        let rg = self.any_grad(&[x]);
        self.push(Tensor::from_parts(shape, out), Op::PadFront { x, axis, count }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let xv = &self.nodes[x.0].value;
        assert_eq!(
            shape.iter().product::<usize>(),
            xv.numel(),
            "reshape {:?} -> {:?}",
            xv.shape(),
            shape
        );
        let value = Tensor::from_parts(shape.to_vec(), xv.data().to_vec());
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Reshape { x }, rg)
    }

    /// `op(a) @ op(b)` for 2-D operands, where `op` optionally transposes.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (ar, ac) = dims2(self.shape(a), ta);
        let (br, bc) = dims2(self.shape(b), tb);
        assert_eq!(ac, br, "matmul inner dimensions {ac} vs {br}");
        let mut out = vec![0.0; ar * bc];
        gemm(
            self.data(a),
            self.shape(a),
            ta,
            self.data(b),
            self.shape(b),
            tb,
            &mut out,
            (ar, ac, bc),
        );
        let rg = self.any_grad(&[a, b]);
        self.push(Tensor::from_parts(vec![ar, bc], out), Op::MatMul { a, b, ta, tb }, rg)
    }

    /// Piecewise evaluation of per-(input, output) one-dimensional functions.
    ///
    /// `x` is `[batch, m]`, `verts` is `[m, P+1]`, nodal values are
    /// `[m, P+1, q]`. `Value` output is `[batch, q]` (summed over inputs);
    /// `Slope` output is the per-function derivative `[batch, m, q]`.
    pub fn spline(
        &mut self,
        basis: SplineBasis,
        output: SplineOutput,
        x: Var,
        verts: Var,
        a0: Var,
        a1: Option<Var>,
    ) -> Result<Var, TapeError> {
        let (value, op) = spline::forward(self, basis, output, x, verts, a0, a1)?;
        let mut parents = vec![x, verts, a0];
        parents.extend(a1);
        let rg = self.any_grad(&parents);
        Ok(self.push(value, Op::Spline(Box::new(op)), rg))
    }

    /// `out[b, j] = sum_k g[b, k] * jac[b, j, k]` with `g: [B, q]`,
    /// `jac: [B, m, q]`.
    pub fn vec_jac(&mut self, g: Var, jac: Var) -> Var {
        let gs = self.shape(g).to_vec();
        let js = self.shape(jac).to_vec();
        assert!(gs.len() == 2 && js.len() == 3 && gs[0] == js[0] && gs[1] == js[2]);
        let (bsz, m, q) = (js[0], js[1], js[2]);
        let gd = self.data(g);
        let jd = self.data(jac);
        let mut out = vec![0.0; bsz * m];
        for b in 0..bsz {
            let grow = &gd[b * q..(b + 1) * q];
            for j in 0..m {
                let jrow = &jd[(b * m + j) * q..(b * m + j + 1) * q];
                out[b * m + j] = grow.iter().zip(jrow).map(|(x, y)| x * y).sum();
            }
        }
        let rg = self.any_grad(&[g, jac]);
        self.push(Tensor::from_parts(vec![bsz, m], out), Op::VecJac { g, jac }, rg)
    }

    /// Reverse sweep from a scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Adjoints, TapeError> {
        self.check(output)?;
        if self.nodes[output.0].value.numel() != 1 {
            return Err(TapeError::NonScalarOutput(
                self.nodes[output.0].value.shape().to_vec(),
            ));
        }
        let mut adj: Vec<Option<Vec<f64>>> = Vec::with_capacity(output.0 + 1);
        adj.resize_with(output.0 + 1, || None);
        if self.nodes[output.0].requires_grad {
            adj[output.0] = Some(vec![1.0]);
        }
        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            adj[i] = Some(g);
        }
        Ok(Adjoints { grads: adj })
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Unary { x, kind } => {
                if !self.nodes[x.0].requires_grad {
                    return;
                }
                let xv = self.nodes[x.0].value.data();
                let yv = node.value.data();
                let buf = slot(adj, *x, xv.len());
                for k in 0..g.len() {
                    buf[k] += g[k] * unary_partial(*kind, xv[k], yv[k]);
                }
            }
            Op::Binary { a, b, kind } => self.propagate_binary(node, *a, *b, *kind, g, adj),
            Op::Sum { x } => {
                if self.nodes[x.0].requires_grad {
                    let n = self.nodes[x.0].value.numel();
                    for v in slot(adj, *x, n).iter_mut() {
                        *v += g[0];
                    }
                }
            }
            Op::SumAxis { x, axis } => {
                if !self.nodes[x.0].requires_grad {
                    return;
                }
                let xs = self.nodes[x.0].value.shape();
                let (outer, n, inner) = axis_split(xs, *axis);
                let buf = slot(adj, *x, outer * n * inner);
                for o in 0..outer {
                    for k in 0..n {
                        let dst = &mut buf[(o * n + k) * inner..(o * n + k + 1) * inner];
                        for (d, s) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Reduce { x, arg, .. } => {
                if self.nodes[x.0].requires_grad {
                    let n = self.nodes[x.0].value.numel();
                    let buf = slot(adj, *x, n);
                    for (k, &src) in arg.iter().enumerate() {
                        buf[src] += g[k];
                    }
                }
            }
            Op::Cumsum { x, axis } => {
                if !self.nodes[x.0].requires_grad {
                    return;
                }
                let xs = self.nodes[x.0].value.shape();
                let (outer, n, inner) = axis_split(xs, *axis);
                let buf = slot(adj, *x, outer * n * inner);
                let mut run = vec![0.0; inner];
                for o in 0..outer {
                    run.iter_mut().for_each(|r| *r = 0.0);
                    for k in (0..n).rev() {
                        let base = (o * n + k) * inner;
                        for r in 0..inner {
                            run[r] += g[base + r];
                            buf[base + r] += run[r];
                        }
                    }
                }
            }
            Op::Slice { x, axis, start } => {
                if !self.nodes[x.0].requires_grad {
                    return;
                }
                let xs = self.nodes[x.0].value.shape();
                let (outer, n, inner) = axis_split(xs, *axis);
                let len = node.value.shape()[*axis];
                let buf = slot(adj, *x, outer * n * inner);
                for o in 0..outer {
                    let dst = &mut buf[(o * n + start) * inner..(o * n + start + len) * inner];
                    for (d, s) in dst.iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner]) {
                        *d += s;
                    }
                }
            }
            Op::PadFront { x, axis, count } => {
                if !self.nodes[x.0].requires_grad {
                    return;
                }
                let xs = self.nodes[x.0].value.shape();
                let (outer, n, inner) = axis_split(xs, *axis);
                let width = n + count;
                let buf = slot(adj, *x, outer * n * inner);
                for o in 0..outer {
                    let src = &g[(o * width + count) * inner..(o + 1) * width * inner];
                    for (d, s) in buf[o * n * inner..(o + 1) * n * inner].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            Op::Reshape { x } => {
                if self.nodes[x.0].requires_grad {
                    let buf = slot(adj, *x, g.len());
                    for (d, s) in buf.iter_mut().zip(g) {
                        *d += s;
                    }
                }
            }
            Op::MatMul { a, b, ta, tb } => self.propagate_matmul(node, *a, *b, *ta, *tb, g, adj),
            Op::Spline(op) => spline::backward(self, op, g, adj),
            Op::VecJac { g: gv, jac } => {
                let js = self.shape(*jac);
                let (bsz, m, q) = (js[0], js[1], js[2]);
                if self.nodes[gv.0].requires_grad {
                    let jd = self.data(*jac);
                    let buf = slot(adj, *gv, bsz * q);
                    for b in 0..bsz {
                        for j in 0..m {
                            let up = g[b * m + j];
                            let jrow = &jd[(b * m + j) * q..(b * m + j + 1) * q];
                            for (d, s) in buf[b * q..(b + 1) * q].iter_mut().zip(jrow) {
                                *d += up * s;
                            }
                        }
                    }
                }
                if self.nodes[jac.0].requires_grad {
                    let gd = self.data(*gv);
                    let buf = slot(adj, *jac, bsz * m * q);
                    for b in 0..bsz {
                        let grow = &gd[b * q..(b + 1) * q];
                        for j in 0..m {
                            let up = g[b * m + j];
                            let dst = &mut buf[(b * m + j) * q..(b * m + j + 1) * q];
                            for (d, s) in dst.iter_mut().zip(grow) {
                                *d += up * s;
                            }
                        }
                    }
                }
            }
        }
    }

    fn propagate_binary(
        &self,
        node: &Node,
        a: Var,
        b: Var,
        kind: BinaryKind,
        g: &[f64],
        adj: &mut [Option<Vec<f64>>],
    ) {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let out_shape = node.value.shape();
        let plan = RowPlan::new(out_shape, av.shape(), bv.shape());
        let (x, y) = (av.data(), bv.data());
        let d = |x: f64, y: f64| match kind {
            BinaryKind::Add => (1.0, 1.0),
            BinaryKind::Sub => (1.0, -1.0),
            BinaryKind::Mul => (y, x),
            BinaryKind::Div => (1.0 / y, -x / (y * y)),
            BinaryKind::Max => if x >= y { (1.0, 0.0) } else { (0.0, 1.0) },
            BinaryKind::Min => if x <= y { (1.0, 0.0) } else { (0.0, 1.0) },
        };
        // one operand at a time, so `a == b` accumulates both terms
        if self.nodes[a.0].requires_grad {
            let buf = slot(adj, a, av.numel());
            scatter_rows(&plan, x, y, g, Some(buf), None, d);
        }
        if self.nodes[b.0].requires_grad {
            let buf = slot(adj, b, bv.numel());
            scatter_rows(&plan, x, y, g, None, Some(buf), d);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn propagate_matmul(
        &self,
        node: &Node,
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
        g: &[f64],
        adj: &mut [Option<Vec<f64>>],
    ) {
        let gs = node.value.shape().to_vec();
        let (ar, ac) = dims2(self.shape(a), ta);
        let bc = gs[1];
        if self.nodes[a.0].requires_grad {
            // d op(a) = G op(b)^T ; if a was transposed, da = (G op(b)^T)^T = op(b) G^T
            let mut tmp = vec![0.0; ar * ac];
            gemm(g, &gs, false, self.data(b), self.shape(b), !tb, &mut tmp, (ar, bc, ac));
            let buf = slot(adj, a, ar * ac);
            accumulate_maybe_transposed(buf, &tmp, ar, ac, ta);
        }
        if self.nodes[b.0].requires_grad {
            let (br, _) = dims2(self.shape(b), tb);
            let mut tmp = vec![0.0; br * bc];
            gemm(self.data(a), self.shape(a), !ta, g, &gs, false, &mut tmp, (br, ar, bc));
            let buf = slot(adj, b, br * bc);
            accumulate_maybe_transposed(buf, &tmp, br, bc, tb);
        }
    }
}

fn accumulate_maybe_transposed(buf: &mut [f64], tmp: &[f64], rows: usize, cols: usize, t: bool) {
    if t {
        // tmp holds the gradient of op(x) = x^T, laid out [rows, cols];
        // x itself is [cols, rows].
        for r in 0..rows {
            for c in 0..cols {
                buf[c * rows + r] += tmp[r * cols + c];
            }
        }
    } else {
        for (d, s) in buf.iter_mut().zip(tmp) {
            *d += s;
        }
    }
}

fn dims2(shape: &[usize], t: bool) -> (usize, usize) {
    assert_eq!(shape.len(), 2, "matmul operands must be 2-D, got {shape:?}");
    if t {
        (shape[1], shape[0])
    } else {
        (shape[0], shape[1])
    }
}

/// `out = op(a) @ op(b)` with `(m, k, n)` the logical dimensions.
#[allow(clippy::too_many_arguments)]
fn gemm(
    a: &[f64],
    a_shape: &[usize],
    ta: bool,
    b: &[f64],
    b_shape: &[usize],
    tb: bool,
    out: &mut [f64],
    (m, k, n): (usize, usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, a_shape[1] as isize) } else { (a_shape[1] as isize, 1) };
    let (rsb, csb) = if tb { (1, b_shape[1] as isize) } else { (b_shape[1] as isize, 1) };
    // SAFETY: the strides above describe `a` and `b` exactly as stored
    // (row-major with the stated shapes) and `out` is a dense `[m, n]` buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Elementwise `f` over a broadcast row plan.
fn map_rows(plan: &RowPlan, a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(plan.rows.len() * plan.len);
    let (sa, sb) = (plan.sa, plan.sb);
    for &(ia, ib) in &plan.rows {
        match (sa, sb) {
            (1, 1) => out.extend(a[ia..ia + plan.len].iter().zip(&b[ib..ib + plan.len]).map(|(&x, &y)| f(x, y))),
            (1, 0) => out.extend(a[ia..ia + plan.len].iter().map(|&x| f(x, b[ib]))),
            (0, 1) => out.extend(b[ib..ib + plan.len].iter().map(|&y| f(a[ia], y))),
            _ => out.extend((0..plan.len).map(|_| f(a[ia], b[ib]))),
        }
    }
    out
}

/// Accumulates `g * d out/d a` and `g * d out/d b` over a row plan, with
/// `d` returning both partials at `(a, b)`.
fn scatter_rows(
    plan: &RowPlan,
    a: &[f64],
    b: &[f64],
    g: &[f64],
    mut ga: Option<&mut [f64]>,
    mut gb: Option<&mut [f64]>,
    d: impl Fn(f64, f64) -> (f64, f64),
) {
    let (sa, sb) = (plan.sa, plan.sb);
    for (r, &(ia, ib)) in plan.rows.iter().enumerate() {
        let gr = &g[r * plan.len..(r + 1) * plan.len];
        for (k, &gk) in gr.iter().enumerate() {
            let (i, j) = (ia + k * sa, ib + k * sb);
            let (pa, pb) = d(a[i], b[j]);
            if let Some(ga) = ga.as_deref_mut() {
                ga[i] += gk * pa;
            }
            if let Some(gb) = gb.as_deref_mut() {
                gb[j] += gk * pb;
            }
        }
    }
}

pub(crate) fn slot(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}
