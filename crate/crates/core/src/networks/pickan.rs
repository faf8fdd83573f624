//! Networks convex in a subset of their inputs.
//!
//! With input `(x, y)`, an unconstrained KAN path `X_{i+1} = rho_i(X_i)`
//! (`X_0 = x`) feeds a convex path `Y_{i+1} = X_{i+1} + kappa_i(Y_i)`
//! (`Y_0 = y`), and the output is `kappa_L(Y_L)`. Every `kappa_i` after the
//! first is convex and nondecreasing, so the output is convex in `y` for
//! any fixed `x`. Boxes add as intervals.

use rand::Rng;

use super::model::Pass;
use super::spec::NetworkSpec;
use crate::autodiff::{Binding, ParamStore, Tape, Var};
use crate::grid::Hypercube;
use crate::layers::{Layer, LayerKind, LayerOptions, TapeBox};
use crate::Result;

#[derive(Clone, Debug)]
pub struct Pickan {
    pub nx: usize,
    pub ny: usize,
    /// `rho_0 .. rho_{L-1}`
    pub rho: Vec<Layer>,
    /// `kappa_0 .. kappa_L`
    pub kappa: Vec<Layer>,
}

impl Pickan {
    pub(crate) fn new<R: Rng>(spec: &NetworkSpec, store: &mut ParamStore, opts: LayerOptions, rng: &mut R) -> Result<Self> {
        let (nx, ny) = spec.split.expect("validated");
        let width = spec.hidden[0];
        let steps = spec.hidden.len();
        let mut rho = Vec::with_capacity(steps);
        let mut kappa = Vec::with_capacity(steps + 1);
        for i in 0..steps {
            let fan_in = if i == 0 { nx } else { width };
            rho.push(Layer::new(LayerKind::Kan, store, &format!("rho{i}"), fan_in, width, spec.p, false, opts, rng)?);
        }
        for i in 0..=steps {
            let fan_in = if i == 0 { ny } else { width };
            let fan_out = if i == steps { 1 } else { width };
            kappa.push(Layer::new(LayerKind::P1, store, &format!("kappa{i}"), fan_in, fan_out, spec.p, i == 0, opts, rng)?);
        }
        Ok(Pickan { nx, ny, rho, kappa })
    }

    pub(crate) fn record(&self, tape: &mut Tape, bind: &Binding, input: Var, domain: &Hypercube) -> Result<Pass> {
        let (nx, ny) = (self.nx, self.ny);
        let x = tape.slice(input, 1, 0, nx);
        let y = tape.slice(input, 1, nx, nx + ny);
        let dom_x = Hypercube { lower: domain.lower[..nx].to_vec(), upper: domain.upper[..nx].to_vec() };
        let dom_y = Hypercube { lower: domain.lower[nx..].to_vec(), upper: domain.upper[nx..].to_vec() };
        let full = TapeBox::constant(tape, domain);
        let gx = TapeBox::constant(tape, &dom_x);
        let gy = TapeBox::constant(tape, &dom_y);

        let r = self.rho[0].forward(tape, bind, x, &gx, false)?;
        let k = self.kappa[0].forward(tape, bind, y, &gy, false)?;
        let (mut xs, mut gx) = (r.y, r.image);
        let mut ys = tape.add(xs, k.y);
        let mut gy = gx.add(tape, &k.image);
        let mut boxes = vec![full, gy];
        let mut outs = vec![ys];
        for i in 1..self.rho.len() {
            let r = self.rho[i].forward(tape, bind, xs, &gx, false)?;
            let k = self.kappa[i].forward(tape, bind, ys, &gy, false)?;
            xs = r.y;
            gx = r.image;
            ys = tape.add(xs, k.y);
            gy = gx.add(tape, &k.image);
            boxes.push(gy);
            outs.push(ys);
        }
        let last = self.kappa.last().expect("at least one kappa");
        let o = last.forward(tape, bind, ys, &gy, false)?;
        boxes.push(o.image);
        outs.push(o.y);
        Ok(Pass { out: o.y, grad: None, boxes, layer_outputs: outs })
    }
}
