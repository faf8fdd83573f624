//! Input-convex feedforward baseline.
//!
//! `z_1 = act(x Wx_0 + b_0)`, `z_{i+1} = act(z_i Wz_i + x Wx_i + b_i)` and
//! output `z_L wz + x wx + b`. The hidden-path weights `Wz_i` and `wz` are
//! projected onto the nonnegative orthant after every optimizer step; with a
//! convex nondecreasing activation the output is convex in `x`.

use rand::Rng;
use rand_distr::Uniform;

use super::model::Pass;
use super::spec::{Activation, NetworkSpec};
use crate::autodiff::{Binding, ParamId, ParamStore, Tape, Tensor, UnaryKind, Var};
use crate::Result;

#[derive(Clone, Debug)]
pub struct Icnn {
    pub activation: Activation,
    pub wx: Vec<ParamId>,
    pub bias: Vec<ParamId>,
    /// `wz[i]` maps layer `i` to layer `i + 1`.
    pub wz: Vec<ParamId>,
    pub out_wz: Option<ParamId>,
    pub out_wx: ParamId,
    pub out_b: ParamId,
}

fn uniform<R: Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let dist = Uniform::new(lo, hi).expect("valid range");
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(dist)).collect()).expect("shape")
}

impl Icnn {
    pub(crate) fn new<R: Rng>(spec: &NetworkSpec, store: &mut ParamStore, rng: &mut R) -> Self {
        let n = spec.dim();
        let sx = 1.0 / (n as f64).sqrt();
        let mut wx = Vec::new();
        let mut bias = Vec::new();
        let mut wz = Vec::new();
        for (i, &h) in spec.hidden.iter().enumerate() {
            wx.push(store.add(format!("icnn.wx{i}"), uniform(rng, &[n, h], -sx, sx)));
            bias.push(store.add(format!("icnn.b{i}"), uniform(rng, &[1, h], -0.1, 0.1)));
            if i > 0 {
                let prev = spec.hidden[i - 1];
                wz.push(store.add(format!("icnn.wz{i}"), uniform(rng, &[prev, h], 0.0, 1.0 / prev as f64)));
            }
        }
        let out_wz = spec
            .hidden
            .last()
            .map(|&h| store.add("icnn.out.wz", uniform(rng, &[h, 1], 0.0, 1.0 / h as f64)));
        let out_wx = store.add("icnn.out.wx", uniform(rng, &[n, 1], -sx, sx));
        let out_b = store.add("icnn.out.b", Tensor::zeros(&[1, 1]));
        Icnn { activation: spec.activation, wx, bias, wz, out_wz, out_wx, out_b }
    }

    /// Clamps hidden-path weights at zero.
    pub fn project(&self, store: &mut ParamStore) {
        for &id in self.wz.iter().chain(&self.out_wz) {
            for v in store.get_mut(id).value.data_mut() {
                *v = v.max(0.0);
            }
        }
    }

    fn act(&self, tape: &mut Tape, u: Var) -> Var {
        match self.activation {
            Activation::Relu => tape.relu(u),
            Activation::Celu { alpha } => tape.unary(u, UnaryKind::Celu(alpha)),
        }
    }

    fn act_slope(&self, tape: &mut Tape, u: Var) -> Var {
        match self.activation {
            Activation::Relu => tape.unary(u, UnaryKind::Step),
            Activation::Celu { alpha } => tape.unary(u, UnaryKind::CeluGrad(alpha)),
        }
    }

    pub(crate) fn record(&self, tape: &mut Tape, bind: &Binding, x: Var, want_grad: bool) -> Result<Pass> {
        let mut pre = Vec::with_capacity(self.wx.len());
        let mut z: Option<Var> = None;
        let mut outs = Vec::new();
        for i in 0..self.wx.len() {
            let mut u = tape.matmul(x, bind[self.wx[i]], false, false);
            if let Some(prev) = z {
                let zz = tape.matmul(prev, bind[self.wz[i - 1]], false, false);
                u = tape.add(u, zz);
            }
            u = tape.add(u, bind[self.bias[i]]);
            pre.push(u);
            let a = self.act(tape, u);
            outs.push(a);
            z = Some(a);
        }
        let mut out = tape.matmul(x, bind[self.out_wx], false, false);
        if let (Some(zl), Some(w)) = (z, self.out_wz) {
            let t = tape.matmul(zl, bind[w], false, false);
            out = tape.add(out, t);
        }
        out = tape.add(out, bind[self.out_b]);
        outs.push(out);

        let grad = if want_grad {
            let shape = tape.shape(x).to_vec();
            let wx_row = tape.reshape(bind[self.out_wx], &[1, shape[1]]);
            let zeros = tape.constant(Tensor::zeros(&shape));
            let mut g = tape.add(zeros, wx_row);
            if let Some(w) = self.out_wz {
                let h = tape.shape(bind[w])[0];
                let mut up = tape.reshape(bind[w], &[1, h]);
                for i in (0..pre.len()).rev() {
                    let slope = self.act_slope(tape, pre[i]);
                    let gu = tape.mul(slope, up);
                    let gx = tape.matmul(gu, bind[self.wx[i]], false, true);
                    g = tape.add(g, gx);
                    if i > 0 {
                        up = tape.matmul(gu, bind[self.wz[i - 1]], false, true);
                    }
                }
            }
            Some(g)
        } else {
            None
        };
        Ok(Pass { out, grad, boxes: Vec::new(), layer_outputs: outs })
    }
}
