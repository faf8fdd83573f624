use rand::Rng;

use super::icnn::Icnn;
use super::pickan::Pickan;
use super::spec::{Family, NetworkSpec};
use crate::autodiff::{Binding, ParamStore, Tape, Tensor, Var};
use crate::grid::Hypercube;
use crate::layers::{Layer, LayerKind, LayerOptions, TapeBox};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub enum Arch {
    /// Plain composition of KAN layers.
    Chain(Vec<Layer>),
    Pickan(Pickan),
    Icnn(Icnn),
}

/// A network together with its parameters and the boxes threaded through
/// its layers at the current parameter values.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: NetworkSpec,
    pub store: ParamStore,
    pub arch: Arch,
    boxes: Vec<Hypercube>,
}

/// Result of recording a model on a tape.
#[derive(Clone, Debug)]
pub struct Pass {
    /// `[B, 1]`
    pub out: Var,
    /// `[B, n]` gradient of the output in the input, when requested.
    pub grad: Option<Var>,
    /// Box entering each layer (the domain first) and the output image.
    /// Empty for the ICNN baseline.
    pub boxes: Vec<TapeBox>,
    /// Output of every layer in order; for PICKAN the convex path.
    pub layer_outputs: Vec<Var>,
}

impl Model {
    pub fn new<R: Rng>(spec: NetworkSpec, rng: &mut R) -> Result<Model> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let opts = LayerOptions { adapt: spec.adapt, random_grid: spec.random_grid };
        let arch = match spec.family {
            Family::P1 | Family::Cubic | Family::Kan => {
                let kind = match spec.family {
                    Family::P1 => LayerKind::P1,
                    Family::Cubic => LayerKind::Cubic,
                    _ => LayerKind::Kan,
                };
                let mut widths = vec![spec.dim()];
                widths.extend(&spec.hidden);
                widths.push(1);
                let depth = widths.len() - 1;
                let mut layers = Vec::with_capacity(depth);
                for l in 0..depth {
                    let mut layer = Layer::new(
                        kind,
                        &mut store,
                        &format!("l{l}"),
                        widths[l],
                        widths[l + 1],
                        spec.p,
                        l == 0,
                        opts,
                        rng,
                    )?;
                    layer.clip = kind == LayerKind::Cubic && l + 1 < depth;
                    layers.push(layer);
                }
                Arch::Chain(layers)
            }
            Family::Pickan => Arch::Pickan(Pickan::new(&spec, &mut store, opts, rng)?),
            Family::Icnn => Arch::Icnn(Icnn::new(&spec, &mut store, rng)),
        };
        let mut model = Model { spec, store, arch, boxes: Vec::new() };
        model.refresh_boxes();
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Boxes from the last refresh: the domain, then the image of every
    /// layer.
    pub fn boxes(&self) -> &[Hypercube] {
        &self.boxes
    }

    pub fn layers(&self) -> Option<&[Layer]> {
        match &self.arch {
            Arch::Chain(layers) => Some(layers),
            _ => None,
        }
    }

    /// Recomputes the cached boxes from the current parameters.
    pub fn refresh_boxes(&mut self) {
        let mut tape = Tape::new();
        let bind = self.store.bind(&mut tape, false);
        let x = tape.constant(Tensor::zeros(&[0, self.dim()]));
        let pass = self.record(&mut tape, &bind, x, false).expect("empty batch always evaluates");
        self.boxes = pass.boxes.iter().map(|b| b.read(&tape)).collect();
    }

    /// Adds `c` to the output by moving the intercept of the last layer.
    pub fn shift_output(&mut self, c: f64) {
        let (prefix, p) = match &self.arch {
            Arch::Chain(layers) => (format!("l{}", layers.len() - 1), self.spec.p),
            Arch::Pickan(pk) => (format!("kappa{}", pk.kappa.len() - 1), self.spec.p),
            Arch::Icnn(_) => ("icnn.out".to_string(), 0),
        };
        // P1 and cubic functions start at `b`; unconstrained ones store
        // every nodal value of function (0, 0) in the first P+1 entries of `a`
        let (id, count) = match self.store.find(&format!("{prefix}.b")) {
            Some(id) => (id, 1),
            None => (self.store.find(&format!("{prefix}.a")).expect("output layer has an intercept"), p + 1),
        };
        let mut v = self.store.value(id).to_vec();
        for x in &mut v[..count] {
            *x += c;
        }
        self.store.set_value(id, &v);
        self.refresh_boxes();
    }

    /// To be called after every optimizer step.
    pub fn after_step(&mut self) {
        if let Arch::Icnn(icnn) = &self.arch {
            icnn.project(&mut self.store);
        }
        self.refresh_boxes();
    }

    fn check_inputs(&self, tape: &Tape, x: Var) -> Result<()> {
        let shape = tape.shape(x);
        let n = self.dim();
        if shape.len() != 2 || shape[1] != n {
            return Err(Error::DimensionMismatch { expected: n, got: *shape.last().unwrap_or(&0) });
        }
        if self.spec.extrapolate {
            return Ok(());
        }
        let dom = &self.spec.domain;
        for row in tape.data(x).chunks(n) {
            for (i, &v) in row.iter().enumerate() {
                if !(dom.lower[i] <= v && v <= dom.upper[i]) {
                    return Err(Error::OutsideDomain { coord: i, value: v, lo: dom.lower[i], hi: dom.upper[i] });
                }
            }
        }
        Ok(())
    }

    /// Records the network on `x` (`[B, n]`) with parameters bound by
    /// `bind`. With `want_grad` the input gradient is recorded too, so any
    /// loss built from it can be differentiated in the parameters with one
    /// reverse sweep.
    pub fn record(&self, tape: &mut Tape, bind: &Binding, x: Var, want_grad: bool) -> Result<Pass> {
        self.check_inputs(tape, x)?;
        match &self.arch {
            Arch::Chain(layers) => record_chain(layers, tape, bind, x, &self.spec.domain, want_grad),
            Arch::Pickan(p) => {
                if want_grad {
                    return Err(Error::InvalidSpec("input gradients are not provided for PICKAN".into()));
                }
                p.record(tape, bind, x, &self.spec.domain)
            }
            Arch::Icnn(net) => net.record(tape, bind, x, want_grad),
        }
    }

    fn batch(&self, x: &[f64]) -> Result<usize> {
        let n = self.dim();
        if x.len() % n != 0 {
            return Err(Error::DimensionMismatch { expected: n, got: x.len() % n });
        }
        Ok(x.len() / n)
    }

    /// Outputs on a row-major batch.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let bsz = self.batch(x)?;
        let mut tape = Tape::new();
        let bind = self.store.bind(&mut tape, false);
        let xv = tape.constant(Tensor::new(vec![bsz, self.dim()], x.to_vec())?);
        let pass = self.record(&mut tape, &bind, xv, false)?;
        Ok(tape.data(pass.out).to_vec())
    }

    /// Outputs and input gradients (row-major `[B, n]`) on a batch.
    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let bsz = self.batch(x)?;
        let mut tape = Tape::new();
        let bind = self.store.bind(&mut tape, false);
        let xv = tape.constant(Tensor::new(vec![bsz, self.dim()], x.to_vec())?);
        let pass = self.record(&mut tape, &bind, xv, true)?;
        let g = pass.grad.expect("requested");
        Ok((tape.data(pass.out).to_vec(), tape.data(g).to_vec()))
    }

    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_gradient(x)?.1)
    }

    /// Value and gradient with linear continuation outside the domain,
    /// regardless of the model's own setting.
    pub fn extrapolated_eval(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.spec.extrapolate {
            return self.value_and_gradient(x);
        }
        let mut open = self.clone();
        open.spec.extrapolate = true;
        open.value_and_gradient(x)
    }

    /// Every intermediate layer output on a batch, for box checks.
    pub fn layer_outputs(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let bsz = self.batch(x)?;
        let mut tape = Tape::new();
        let bind = self.store.bind(&mut tape, false);
        let xv = tape.constant(Tensor::new(vec![bsz, self.dim()], x.to_vec())?);
        let pass = self.record(&mut tape, &bind, xv, false)?;
        Ok(pass.layer_outputs.iter().map(|&v| tape.data(v).to_vec()).collect())
    }
}

/// Composition of layers starting from `domain`. The input gradient is
/// accumulated backwards through the per-layer Jacobians.
pub(crate) fn record_chain(
    layers: &[Layer],
    tape: &mut Tape,
    bind: &Binding,
    x: Var,
    domain: &Hypercube,
    want_grad: bool,
) -> Result<Pass> {
    let mut dom = TapeBox::constant(tape, domain);
    let mut boxes = vec![dom];
    let mut h = x;
    let mut jacs = Vec::with_capacity(layers.len());
    let mut outs = Vec::with_capacity(layers.len());
    for layer in layers {
        let pass = layer.forward(tape, bind, h, &dom, want_grad)?;
        h = pass.y;
        dom = pass.image;
        boxes.push(dom);
        outs.push(h);
        jacs.extend(pass.jac);
    }
    let grad = if want_grad {
        let bsz = tape.shape(x)[0];
        let mut g = tape.constant(Tensor::full(&[bsz, 1], 1.0));
        for &j in jacs.iter().rev() {
            g = tape.vec_jac(g, j);
        }
        Some(g)
    } else {
        None
    };
    Ok(Pass { out: h, grad, boxes, layer_outputs: outs })
}
