//! Property checks shared by the test suites and the `verify` command.
//!
//! Each check draws its own seeded models and points and reports the worst
//! violation it found next to the tolerance it was held to, so any failure
//! can be replayed from the printed seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape, Tensor};
use crate::grid::Hypercube;
use crate::networks::{construct_max_affine_p1, Activation, Checkpoint, Family, Model, NetworkSpec};
use crate::Result;

/// Moves every parameter to a random point well inside its smooth region:
/// slope increments and non-first slopes keep `|v| >= 1e-2`, gates and grid
/// weights spread over a few units. ICNN hidden-path weights stay
/// nonnegative.
pub fn scramble<R: Rng>(model: &mut Model, rng: &mut R) {
    for id in model.store.ids().collect::<Vec<_>>() {
        let name = model.store.get(id).name.clone();
        let n = model.store.get(id).value.numel();
        let vals: Vec<f64> = (0..n)
            .map(|_| {
                let suffix = name.rsplit('.').next().unwrap_or("");
                match suffix {
                    "d" => {
                        let mag = rng.random_range(0.01..0.5);
                        if rng.random_bool(0.8) { mag } else { -mag }
                    }
                    "bhat" => {
                        let mag = rng.random_range(0.02..1.0);
                        if rng.random_bool(0.75) { mag } else { -mag }
                    }
                    "g" => rng.random_range(-3.0..3.0),
                    _ if name.starts_with("icnn.wz") || name == "icnn.out.wz" => rng.random_range(0.0..0.5),
                    _ if name.starts_with("icnn.") => rng.random_range(-1.0..1.0),
                    _ => rng.random_range(-1.0..1.0),
                }
            })
            .collect();
        model.store.set_value(id, &vals);
    }
    model.after_step();
}

/// Convex model of `family` with `depth` layers in total (so `depth - 1`
/// hidden layers of `width`), scrambled parameters and an adaptive grid.
pub fn random_model(family: Family, dim: usize, depth: usize, width: usize, p: usize, seed: u64) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = Hypercube::cube(dim, -1.0, 1.0)?;
    let hidden = vec![width; depth.saturating_sub(1)];
    let spec = match family {
        Family::Icnn => {
            let act = if rng.random_bool(0.5) { Activation::Relu } else { Activation::Celu { alpha: 1.0 } };
            NetworkSpec::icnn(domain, hidden, act)
        }
        Family::Pickan => NetworkSpec::pickan(domain, (dim / 2).max(1), depth.max(1), width, p, true),
        f => NetworkSpec::ickan(f, domain, hidden, p, true),
    };
    let mut model = Model::new(spec, &mut rng)?;
    scramble(&mut model, &mut rng);
    Ok(model)
}

pub fn uniform_points<R: Rng>(rng: &mut R, dom: &Hypercube, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dom.dim());
    for _ in 0..n {
        for i in 0..dom.dim() {
            out.push(rng.random_range(dom.lower[i]..=dom.upper[i]));
        }
    }
    out
}

/// Largest `f((a+b)/2) - (f(a)+f(b))/2` over `pairs` random pairs.
pub fn midpoint_violation<R: Rng>(model: &Model, rng: &mut R, pairs: usize) -> Result<f64> {
    let dom = &model.spec.domain;
    let a = uniform_points(rng, dom, pairs);
    let b = uniform_points(rng, dom, pairs);
    let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
    let fa = model.predict(&a)?;
    let fb = model.predict(&b)?;
    let fm = model.predict(&mid)?;
    Ok((0..pairs).map(|i| fm[i] - 0.5 * (fa[i] + fb[i])).fold(f64::NEG_INFINITY, f64::max))
}

/// Same test for a PICKAN in its convex inputs at fixed `x`.
pub fn partial_midpoint_violation<R: Rng>(model: &Model, x: &[f64], rng: &mut R, pairs: usize) -> Result<f64> {
    let dom = &model.spec.domain;
    let nx = x.len();
    let n = dom.dim();
    let mut worst = f64::NEG_INFINITY;
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut m = Vec::new();
    for _ in 0..pairs {
        a.extend_from_slice(x);
        b.extend_from_slice(x);
        m.extend_from_slice(x);
        for i in nx..n {
            let ya = rng.random_range(dom.lower[i]..=dom.upper[i]);
            let yb = rng.random_range(dom.lower[i]..=dom.upper[i]);
            a.push(ya);
            b.push(yb);
            m.push(0.5 * (ya + yb));
        }
    }
    let fa = model.predict(&a)?;
    let fb = model.predict(&b)?;
    let fm = model.predict(&m)?;
    for i in 0..pairs {
        worst = worst.max(fm[i] - 0.5 * (fa[i] + fb[i]));
    }
    Ok(worst)
}

/// Largest distance by which an intermediate output leaves its recorded box
/// (0 when every output is inside).
pub fn box_violation(model: &Model, x: &[f64]) -> Result<f64> {
    let outs = model.layer_outputs(x)?;
    let boxes = model.boxes();
    let mut worst: f64 = 0.0;
    for (l, out) in outs.iter().enumerate() {
        let b = &boxes[l + 1];
        let q = b.dim();
        for row in out.chunks(q) {
            for k in 0..q {
                worst = worst.max(b.lower[k] - row[k]).max(row[k] - b.upper[k]);
            }
        }
    }
    Ok(worst)
}

/// Worst `|fd - ad| / max(1, |fd|)` between tape gradients and central
/// differences (step `h`) of `sum(w * f(x)) + sum(v * grad f(x))` over
/// every parameter. With `with_input_grad = false` the second term is left
/// out.
pub fn parameter_gradient_error(model: &Model, x: &[f64], with_input_grad: bool, seed: u64, h: f64) -> Result<f64> {
    let n = model.dim();
    let bsz = x.len() / n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..bsz).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..bsz * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |store: &ParamStore, grads: bool| -> Result<(f64, Option<ParamStore>)> {
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape, true);
        let xv = tape.constant(Tensor::new(vec![bsz, n], x.to_vec())?);
        let pass = model.record(&mut tape, &bind, xv, with_input_grad)?;
        let wv = tape.constant(Tensor::new(vec![bsz, 1], w.clone())?);
        let t = tape.mul(pass.out, wv);
        let mut s = tape.sum(t);
        if let Some(g) = pass.grad {
            let vv = tape.constant(Tensor::new(vec![bsz, n], v.clone())?);
            let t = tape.mul(g, vv);
            let t = tape.sum(t);
            s = tape.add(s, t);
        }
        let val = tape.data(s)[0];
        if !grads {
            return Ok((val, None));
        }
        let adj = tape.backward(s)?;
        let mut out = store.clone();
        out.zero_grad();
        out.accumulate(&bind, &adj);
        Ok((val, Some(out)))
    };
    let (_, g) = loss(&model.store, true)?;
    let g = g.expect("requested");
    let mut store = model.store.clone();
    let mut worst: f64 = 0.0;
    for id in store.ids().collect::<Vec<_>>() {
        let base = store.value(id).to_vec();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] = base[i] + h;
            store.set_value(id, &p);
            let (fp, _) = loss(&store, false)?;
            p[i] = base[i] - h;
            store.set_value(id, &p);
            let (fm, _) = loss(&store, false)?;
            store.set_value(id, &base);
            let fd = (fp - fm) / (2.0 * h);
            let ad = g.get(id).grad[i];
            worst = worst.max((fd - ad).abs() / fd.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// Worst relative error between the recorded input gradient and central
/// differences of the forward pass.
pub fn input_gradient_error(model: &Model, x: &[f64], h: f64) -> Result<f64> {
    let n = model.dim();
    let g = model.input_gradient(x)?;
    let mut worst: f64 = 0.0;
    for (b, row) in x.chunks(n).enumerate() {
        for i in 0..n {
            let mut p = row.to_vec();
            p[i] += h;
            let fp = model.predict(&p)?[0];
            p[i] -= 2.0 * h;
            let fm = model.predict(&p)?[0];
            let fd = (fp - fm) / (2.0 * h);
            worst = worst.max((fd - g[b * n + i]).abs() / fd.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// Largest `-(grad f(a) - grad f(b)) . (a - b)` over random pairs.
pub fn monotonicity_violation<R: Rng>(model: &Model, rng: &mut R, pairs: usize) -> Result<f64> {
    let n = model.dim();
    let dom = &model.spec.domain;
    let a = uniform_points(rng, dom, pairs);
    let b = uniform_points(rng, dom, pairs);
    let ga = model.input_gradient(&a)?;
    let gb = model.input_gradient(&b)?;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..pairs {
        let dot: f64 = (0..n).map(|k| (ga[i * n + k] - gb[i * n + k]) * (a[i * n + k] - b[i * n + k])).sum();
        worst = worst.max(-dot);
    }
    Ok(worst)
}

/// Sup error of the constructed max-affine network over a tensor grid with
/// `per_axis` points per coordinate.
pub fn max_affine_error(a1: &[f64], b1: f64, a2: &[f64], b2: f64, domain: &Hypercube, per_axis: usize) -> Result<f64> {
    let model = construct_max_affine_p1(a1, b1, a2, b2, domain)?;
    let n = domain.dim();
    let total = per_axis.pow(n as u32);
    let mut pts = Vec::with_capacity(total * n);
    for idx in 0..total {
        let mut r = idx;
        for i in 0..n {
            let s = (r % per_axis) as f64 / (per_axis - 1) as f64;
            r /= per_axis;
            pts.push(domain.lower[i] * (1.0 - s) + domain.upper[i] * s);
        }
    }
    let y = model.predict(&pts)?;
    let mut worst: f64 = 0.0;
    for (row, v) in pts.chunks(n).zip(&y) {
        let l1: f64 = a1.iter().zip(row).map(|(a, x)| a * x).sum::<f64>() + b1;
        let l2: f64 = a2.iter().zip(row).map(|(a, x)| a * x).sum::<f64>() + b2;
        worst = worst.max((v - l1.max(l2)).abs());
    }
    Ok(worst)
}

/// Outcome of one property check.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub worst: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<4} {:<34} worst {:>10.3e}  tol {:>8.1e}  seed {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.seed
        )
    }
}

fn check(name: &str, seed: u64, tolerance: f64, worst: Result<f64>) -> CheckResult {
    let (passed, worst) = match worst {
        Ok(w) => (w <= tolerance, w),
        Err(_) => (false, f64::NAN),
    };
    CheckResult { name: name.to_string(), passed, worst, tolerance, seed }
}

/// Runs the structural property suite: convexity, gradients, boxes, the
/// max-affine construction and checkpoint round trips.
pub fn run_suite(seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for family in [Family::P1, Family::Cubic, Family::Icnn] {
        let s = rng.random();
        let worst = (|| {
            let mut srng = ChaCha8Rng::seed_from_u64(s);
            let mut worst = f64::NEG_INFINITY;
            for t in 0..10u64 {
                let dim = [1, 2, 4][(t % 3) as usize];
                let depth = 1 + (t % 3) as usize;
                let p = [5, 10, 20][(t / 3 % 3) as usize];
                let m = random_model(family, dim, depth, 6, p, s.wrapping_add(t))?;
                worst = worst.max(midpoint_violation(&m, &mut srng, 300)?);
            }
            Ok(worst)
        })();
        out.push(check(&format!("midpoint convexity ({family})"), s, 1e-8, worst));
    }
    let s = rng.random();
    out.push(check(
        "convexity in y (pickan)",
        s,
        1e-8,
        (|| {
            let m = random_model(Family::Pickan, 2, 2, 5, 6, s)?;
            let mut srng = ChaCha8Rng::seed_from_u64(s);
            let mut worst = f64::NEG_INFINITY;
            for _ in 0..5 {
                let x = [srng.random_range(-1.0..1.0)];
                worst = worst.max(partial_midpoint_violation(&m, &x, &mut srng, 200)?);
            }
            Ok(worst)
        })(),
    ));
    for family in [Family::P1, Family::Cubic] {
        let s = rng.random();
        out.push(check(
            &format!("parameter gradients ({family})"),
            s,
            1e-4,
            (|| {
                let m = random_model(family, 2, 2, 3, 4, s)?;
                let mut srng = ChaCha8Rng::seed_from_u64(s);
                let x = uniform_points(&mut srng, &m.spec.domain.inflate(-0.05), 6);
                parameter_gradient_error(&m, &x, family == Family::Cubic, s, 1e-6)
            })(),
        ));
    }
    let s = rng.random();
    out.push(check(
        "input gradient (cubic)",
        s,
        1e-4,
        (|| {
            let m = random_model(Family::Cubic, 3, 3, 5, 6, s)?;
            let mut srng = ChaCha8Rng::seed_from_u64(s);
            let x = uniform_points(&mut srng, &m.spec.domain.inflate(-0.05), 30);
            input_gradient_error(&m, &x, 1e-6)
        })(),
    ));
    for family in [Family::P1, Family::Cubic] {
        let s = rng.random();
        out.push(check(
            &format!("monotone gradient map ({family})"),
            s,
            1e-8,
            (|| {
                let m = random_model(family, 2, 2, 5, 8, s)?;
                monotonicity_violation(&m, &mut ChaCha8Rng::seed_from_u64(s), 500)
            })(),
        ));
    }
    for family in [Family::P1, Family::Cubic, Family::Pickan] {
        let s = rng.random();
        out.push(check(
            &format!("box soundness ({family})"),
            s,
            1e-9,
            (|| {
                let m = random_model(family, 2, 3, 5, 8, s)?;
                let x = uniform_points(&mut ChaCha8Rng::seed_from_u64(s), &m.spec.domain, 2000);
                box_violation(&m, &x)
            })(),
        ));
    }
    let s = rng.random();
    out.push(check(
        "max-affine construction",
        s,
        1e-10,
        (|| {
            let mut srng = ChaCha8Rng::seed_from_u64(s);
            let mut worst: f64 = 0.0;
            for dim in 1..=3 {
                let a1: Vec<f64> = (0..dim).map(|_| srng.random_range(-2.0..2.0)).collect();
                let a2: Vec<f64> = (0..dim).map(|_| srng.random_range(-2.0..2.0)).collect();
                let dom = Hypercube::cube(dim, -1.0, 1.5)?;
                let per_axis = [200, 40, 12][dim - 1];
                worst = worst.max(max_affine_error(&a1, srng.random_range(-1.0..1.0), &a2, srng.random_range(-1.0..1.0), &dom, per_axis)?);
            }
            Ok(worst)
        })(),
    ));
    let s = rng.random();
    out.push(check(
        "checkpoint round trip",
        s,
        1e-12,
        (|| {
            let m = random_model(Family::Cubic, 2, 2, 4, 5, s)?;
            let back = Checkpoint::from_json(&Checkpoint::from_model(&m).to_json())?.into_model()?;
            let mut worst: f64 = 0.0;
            for (a, b) in m.store.iter().zip(back.store.iter()) {
                for (x, y) in a.value.data().iter().zip(b.value.data()) {
                    worst = worst.max((x - y).abs() / x.abs().max(1e-300));
                }
            }
            Ok(worst)
        })(),
    ));
    out
}
