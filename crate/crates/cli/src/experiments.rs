//! One function per subcommand. Each returns `Ok(false)` when it ran to
//! completion but a check it reports failed.

use std::path::Path;

use ickan::grid::Hypercube;
use ickan::networks::{Activation, Checkpoint, Family, Model, NetworkSpec};
use ickan::training::{
    appendix, center_edge_ratio, kms_matrix, lq_fit, mse_fit, partial, quadratic_kink, wrong_convexity as wrong_target, FitConfig,
    FitReport, FitRow, LqProblem,
};
use ickan::transport::{
    build_potentials, linear_baseline, map_slice, marginal_report, minimax_train, transport, Benchmark,
    MinimaxConfig, OtRow, PotentialSpec, TransportProblem,
};
use ickan::verify::{max_affine_error, midpoint_violation, partial_midpoint_violation, random_model, run_suite};
use ickan::rng;
use rand::Rng;
use serde::Serialize;
use serde_json::json;

use crate::output::Outputs;
use crate::{AnyResult, AppendixArgs, Common, FitArgs, LqArgs, NetArgs, OracleArgs, OtArgs, PickanArgs, TrainArgs, VerifyArgs, WrongArgs};

/// Convexity tolerance of the midpoint checks on trained models.
const CONVEXITY_TOL: f64 = 1e-8;

struct NetDefaults {
    family: Family,
    adapt: bool,
    layers: usize,
    neurons: usize,
    p: usize,
}

/// Fully resolved network choice.
#[derive(Clone, Debug, Serialize)]
struct Net {
    family: Family,
    adapt: bool,
    hidden: Vec<usize>,
    p: usize,
    activation: Activation,
}

impl NetArgs {
    fn activation(&self) -> AnyResult<Activation> {
        match self.activation.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "celu" => Ok(Activation::Celu { alpha: self.celu_alpha }),
            other => Err(format!("unknown activation `{other}` (expected relu or celu)").into()),
        }
    }

    fn family(&self, default: Family) -> AnyResult<Family> {
        Ok(match &self.family {
            Some(f) => f.parse()?,
            None => default,
        })
    }

    fn resolve(&self, d: NetDefaults) -> AnyResult<Net> {
        let layers = self.layers.unwrap_or(d.layers);
        Ok(Net {
            family: self.family(d.family)?,
            adapt: self.adapt.unwrap_or(d.adapt),
            hidden: vec![self.neurons.unwrap_or(d.neurons); layers],
            p: self.p.unwrap_or(d.p),
            activation: self.activation()?,
        })
    }
}

impl Net {
    fn spec(&self, domain: Hypercube) -> AnyResult<NetworkSpec> {
        let spec = match self.family {
            Family::Icnn => NetworkSpec::icnn(domain, self.hidden.clone(), self.activation),
            Family::Pickan => return Err("this experiment does not take the pickan family; use pickan-fit".into()),
            f => NetworkSpec::ickan(f, domain, self.hidden.clone(), self.p, self.adapt),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn label(&self) -> String {
        method_label(self.family, self.adapt)
    }

    fn neurons(&self) -> usize {
        self.hidden.first().copied().unwrap_or(0)
    }
}

fn method_label(family: Family, adapt: bool) -> String {
    let base = match family {
        Family::P1 => "P1-ICKAN",
        Family::Cubic => "C-ICKAN",
        Family::Pickan => "PICKAN",
        Family::Icnn => return "ICNN".into(),
        Family::Kan => "P1-KAN",
    };
    if adapt {
        format!("{base} adapt")
    } else {
        base.into()
    }
}

impl TrainArgs {
    fn resolve(&self, d: FitConfig) -> AnyResult<FitConfig> {
        let cfg = FitConfig {
            iterations: self.iterations.unwrap_or(d.iterations),
            batch: self.batch.unwrap_or(d.batch),
            lr: self.lr.unwrap_or(d.lr),
            validation: self.validation.unwrap_or(d.validation),
            selection: self.selection.unwrap_or(d.selection),
            eval_every: self.eval_every.unwrap_or(d.eval_every),
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs `f(0..runs)`, on scoped threads when `--parallel` is set.
fn run_all<T: Send>(c: &Common, f: impl Fn(u64) -> AnyResult<T> + Sync) -> AnyResult<Vec<T>> {
    if c.runs == 0 {
        return Err("--runs must be positive".into());
    }
    if !c.parallel {
        return (0..c.runs as u64).map(&f).collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..c.runs as u64)
            .map(|r| {
                let f = &f;
                s.spawn(move || f(r))
            })
            .collect();
        handles.into_iter().map(|h| h.join().map_err(|_| "a run panicked")?).collect()
    })
}

fn seeded_fit(base: &FitConfig, experiment: &str, seed: u64, run: u64) -> FitConfig {
    FitConfig { seed: rng::mix(experiment, seed, run), ..base.clone() }
}

fn new_model(spec: &NetworkSpec, experiment: &str, seed: u64, run: u64) -> AnyResult<Model> {
    Ok(Model::new(spec.clone(), &mut rng::stream(&format!("{experiment}/init"), seed, run))?)
}

#[derive(Serialize)]
struct TraceRow {
    run: u64,
    step: usize,
    selection_mse: f64,
}

fn trace_rows(reports: &[&FitReport]) -> Vec<TraceRow> {
    reports
        .iter()
        .enumerate()
        .flat_map(|(r, rep)| rep.evals.iter().map(move |&(step, v)| TraceRow { run: r as u64, step, selection_mse: v }))
        .collect()
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64).collect()
}

pub fn fit(a: &FitArgs) -> AnyResult<bool> {
    let net = a.net.resolve(NetDefaults { family: Family::P1, adapt: false, layers: 2, neurons: 20, p: 20 })?;
    let cfg = a.train.resolve(FitConfig::default())?;
    let domain = Hypercube::cube(a.dim, -2.0, 2.0)?;
    let spec = net.spec(domain.clone())?;
    let amat = kms_matrix(a.dim);
    let target = move |x: &[f64]| quadratic_kink(x, &amat);
    let seed = a.common.seed;
    let results = run_all(&a.common, |r| {
        let mut model = new_model(&spec, "fit", seed, r)?;
        let rep = mse_fit(&mut model, &target, &domain, &seeded_fit(&cfg, "fit", seed, r))?;
        println!("run {r}: validation mse {:.4e} (best step {})", rep.val_mse, rep.best_step);
        Ok((model, rep))
    })?;
    let mut out = Outputs::new(&a.common.out)?;
    let mut rows = Vec::new();
    for (r, (model, rep)) in results.iter().enumerate() {
        out.checkpoint(&format!("fit_run{r}.json"), model)?;
        rows.push(FitRow {
            method: net.label(),
            layers: net.hidden.len(),
            neurons: net.neurons(),
            p: if net.family == Family::Icnn { 0 } else { net.p },
            run: r,
            iterations: rep.iterations,
            mse: rep.val_mse,
            wall_seconds: rep.wall_seconds,
        });
    }
    out.csv("fit.csv", &rows)?;
    out.csv("fit_trace.csv", &trace_rows(&results.iter().map(|x| &x.1).collect::<Vec<_>>()))?;
    out.manifest("fit", &json!({ "args": a, "network": net, "train": cfg, "parameters": results[0].0.num_params() }))?;
    Ok(true)
}

#[derive(Serialize)]
struct WrongRow {
    run: u64,
    dim: usize,
    mse: f64,
    convexity_violation: f64,
    center_error: f64,
    edge_error: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct ProfileRow {
    run: u64,
    t: f64,
    target: f64,
    model: f64,
    abs_error: f64,
}

#[derive(Serialize)]
struct ErrorGridRow {
    run: u64,
    x1: f64,
    x2: f64,
    error: f64,
}

pub fn wrong_convexity(a: &WrongArgs) -> AnyResult<bool> {
    if !(1..=2).contains(&a.dim) {
        return Err(format!("wrong-convexity is defined for dim 1 or 2, got {}", a.dim).into());
    }
    if a.points < 2 {
        return Err("--points must be at least 2".into());
    }
    let net = a.net.resolve(NetDefaults { family: Family::P1, adapt: true, layers: 1, neurons: 10, p: 10 })?;
    let cfg = a.train.resolve(FitConfig::default())?;
    let domain = Hypercube::cube(a.dim, -2.0, 2.0)?;
    let spec = net.spec(domain.clone())?;
    let target = |x: &[f64]| wrong_target(x).unwrap_or(f64::NAN);
    let seed = a.common.seed;
    let ts = linspace(-2.0, 2.0, a.points);
    let results = run_all(&a.common, |r| {
        let mut model = new_model(&spec, "wrong", seed, r)?;
        let rep = mse_fit(&mut model, &target, &domain, &seeded_fit(&cfg, "wrong", seed, r))?;
        let viol = midpoint_violation(&model, &mut rng::stream("wrong/convexity", seed, r), 1000)?;
        // profile along the negative-curvature axis, other coordinates at 0
        let pts: Vec<f64> = ts.iter().flat_map(|&t| if a.dim == 1 { vec![t] } else { vec![0.0, t] }).collect();
        let pred = model.predict(&pts)?;
        let profile: Vec<ProfileRow> = pts
            .chunks(a.dim)
            .zip(&pred)
            .zip(&ts)
            .map(|((x, &m), &t)| {
                let f = target(x);
                ProfileRow { run: r, t, target: f, model: m, abs_error: (f - m).abs() }
            })
            .collect();
        let ratio = center_edge_ratio(&profile.iter().map(|p| (p.t, p.abs_error)).collect::<Vec<_>>());
        let mut grid = Vec::new();
        if a.dim == 2 {
            let g: Vec<f64> = ts.iter().flat_map(|&x1| ts.iter().flat_map(move |&x2| [x1, x2])).collect();
            let v = model.predict(&g)?;
            for (x, m) in g.chunks(2).zip(v) {
                grid.push(ErrorGridRow { run: r, x1: x[0], x2: x[1], error: target(x) - m });
            }
        }
        println!(
            "run {r}: mse {:.4e}, convexity violation {viol:.2e}, center/edge error {:.3e}/{:.3e} = {:.3}",
            rep.val_mse, ratio.center, ratio.edge, ratio.ratio
        );
        let row = WrongRow {
            run: r,
            dim: a.dim,
            mse: rep.val_mse,
            convexity_violation: viol,
            center_error: ratio.center,
            edge_error: ratio.edge,
            ratio: ratio.ratio,
        };
        Ok((model, row, profile, grid))
    })?;
    let mut out = Outputs::new(&a.common.out)?;
    for (r, res) in results.iter().enumerate() {
        out.checkpoint(&format!("wrong_run{r}.json"), &res.0)?;
    }
    out.csv("wrong.csv", &results.iter().map(|x| &x.1).collect::<Vec<_>>())?;
    out.csv("wrong_profile.csv", &results.iter().flat_map(|x| &x.2).collect::<Vec<_>>())?;
    if a.dim == 2 {
        out.csv("wrong_error_grid.csv", &results.iter().flat_map(|x| &x.3).collect::<Vec<_>>())?;
    }
    out.manifest("wrong-convexity", &json!({ "args": a, "network": net, "train": cfg }))?;
    Ok(results.iter().all(|x| x.1.convexity_violation <= CONVEXITY_TOL))
}

#[derive(Serialize)]
struct LqRow {
    method: String,
    layers: usize,
    neurons: usize,
    #[serde(rename = "P")]
    p: usize,
    run: u64,
    iterations: usize,
    mse: f64,
    max_rel_error: f64,
    offset_rel_error: f64,
    wall_seconds: f64,
}

pub fn lq(a: &LqArgs) -> AnyResult<bool> {
    let net = a.net.resolve(NetDefaults { family: Family::P1, adapt: true, layers: 2, neurons: 10, p: 10 })?;
    let cfg = a.train.resolve(FitConfig::default())?;
    let problem = LqProblem::identity(a.dim, a.horizon)?;
    problem.validate()?;
    let spec = net.spec(problem.x0_box.clone())?;
    let seed = a.common.seed;
    let results = run_all(&a.common, |r| {
        let mut model = new_model(&spec, "lq", seed, r)?;
        let rep = lq_fit(&mut model, &problem, &seeded_fit(&cfg, "lq", seed, r), a.per_axis)?;
        println!(
            "run {r}: max relative error {:.3}%, at the origin {:.3}%",
            100.0 * rep.max_rel_error,
            100.0 * rep.offset_rel_error
        );
        Ok((model, rep))
    })?;
    let mut out = Outputs::new(&a.common.out)?;
    let mut rows = Vec::new();
    for (r, (model, rep)) in results.iter().enumerate() {
        out.checkpoint(&format!("lq_run{r}.json"), model)?;
        out.csv(&format!("lq_grid_run{r}.csv"), &rep.grid)?;
        rows.push(LqRow {
            method: net.label(),
            layers: net.hidden.len(),
            neurons: net.neurons(),
            p: net.p,
            run: r as u64,
            iterations: rep.fit.iterations,
            mse: rep.fit.val_mse,
            max_rel_error: rep.max_rel_error,
            offset_rel_error: rep.offset_rel_error,
            wall_seconds: rep.fit.wall_seconds,
        });
    }
    out.csv("lq.csv", &rows)?;
    out.manifest("lq", &json!({ "args": a, "network": net, "train": cfg }))?;
    Ok(true)
}

#[derive(Serialize)]
struct PickanRow {
    method: String,
    layers: usize,
    neurons: usize,
    #[serde(rename = "P")]
    p: usize,
    run: u64,
    iterations: usize,
    mse: f64,
    convexity_violation: f64,
    wall_seconds: f64,
}

pub fn pickan_fit(a: &PickanArgs) -> AnyResult<bool> {
    if let Some(f) = &a.net.family {
        if f.parse::<Family>()? != Family::Pickan {
            return Err(format!("pickan-fit trains the pickan family, not `{f}`").into());
        }
    }
    let net = a.net.resolve(NetDefaults { family: Family::Pickan, adapt: true, layers: 2, neurons: 40, p: 40 })?;
    let cfg = a.train.resolve(FitConfig::default())?;
    let domain = Hypercube::cube(2, -2.0, 2.0)?;
    let spec = NetworkSpec::pickan(domain.clone(), 1, net.hidden.len(), net.neurons(), net.p, net.adapt);
    spec.validate()?;
    let target = |x: &[f64]| partial(x[0], x[1]);
    let seed = a.common.seed;
    let xs: Vec<f64> = (0..a.check_x).map(|i| -2.0 + 4.0 * (i as f64 + 0.5) / a.check_x as f64).collect();
    let results = run_all(&a.common, |r| {
        let mut model = new_model(&spec, "pickan", seed, r)?;
        let rep = mse_fit(&mut model, &target, &domain, &seeded_fit(&cfg, "pickan", seed, r))?;
        let mut crng = rng::stream("pickan/convexity", seed, r);
        let mut viol = f64::NEG_INFINITY;
        for &x in &xs {
            viol = viol.max(partial_midpoint_violation(&model, &[x], &mut crng, 1000)?);
        }
        println!("run {r}: validation mse {:.4e}, convexity-in-y violation {viol:.2e}", rep.val_mse);
        Ok((model, rep, viol))
    })?;
    let mut out = Outputs::new(&a.common.out)?;
    let mut rows = Vec::new();
    for (r, (model, rep, viol)) in results.iter().enumerate() {
        out.checkpoint(&format!("pickan_run{r}.json"), model)?;
        rows.push(PickanRow {
            method: method_label(Family::Pickan, net.adapt),
            layers: net.hidden.len(),
            neurons: net.neurons(),
            p: net.p,
            run: r as u64,
            iterations: rep.iterations,
            mse: rep.val_mse,
            convexity_violation: *viol,
            wall_seconds: rep.wall_seconds,
        });
    }
    out.csv("pickan.csv", &rows)?;
    out.csv("pickan_trace.csv", &trace_rows(&results.iter().map(|x| &x.1).collect::<Vec<_>>()))?;
    out.manifest("pickan-fit", &json!({ "args": a, "network": net, "train": cfg }))?;
    Ok(results.iter().all(|x| x.2 <= CONVEXITY_TOL))
}

#[derive(Serialize)]
struct OtTraceRow {
    run: u64,
    outer: usize,
    test_uvp: f64,
}

#[derive(Serialize)]
struct DensityRow {
    run: u64,
    sample: &'static str,
    coord: usize,
    x: f64,
    density: f64,
}

#[derive(Serialize)]
struct HistogramRow {
    run: u64,
    sample: &'static str,
    coord: usize,
    left: f64,
    right: f64,
    count: usize,
}

#[derive(Serialize)]
struct SliceRow {
    coord: usize,
    x: f64,
    estimate: f64,
    exact: f64,
}

pub fn ot(a: &OtArgs) -> AnyResult<bool> {
    let benchmark: Benchmark = a.benchmark.parse()?;
    let problem = TransportProblem::new(benchmark, a.dim)?;
    let family = a.net.family(Family::Cubic)?;
    let default = PotentialSpec::cubic_default(a.dim, 10);
    let hidden = match (a.net.layers, a.net.neurons) {
        (None, None) => default.hidden.clone(),
        (l, n) => vec![n.unwrap_or(default.hidden[0]); l.unwrap_or(2)],
    };
    let pot = PotentialSpec {
        family,
        hidden,
        p: a.net.p.unwrap_or(10),
        adapt: a.net.adapt.unwrap_or(true),
        activation: a.net.activation()?,
    };
    let base = MinimaxConfig {
        outer: a.outer,
        inner: a.inner,
        batch: a.batch,
        lr: a.lr,
        eval_every: a.eval_every,
        test_size: a.test_size,
        validation_size: a.validation_size,
        pretrain_steps: a.pretrain_steps,
        pretrain_lr: a.pretrain_lr,
        ..MinimaxConfig::default()
    };
    base.validate()?;
    pot.network(Hypercube::cube(a.dim, 0.0, 1.0)?)?.validate()?;
    if a.slice_points < 2 {
        return Err("--slice-points must be at least 2".into());
    }
    let seed = a.common.seed;
    let neurons = pot.hidden.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("-");
    let method = method_label(pot.family, pot.adapt && pot.family != Family::Icnn);
    let results = run_all(&a.common, |r| {
        let cfg = MinimaxConfig { seed: rng::mix("ot", seed, r), ..base.clone() };
        let (mut phi, mut psi) = build_potentials(&problem, &pot, &cfg)?;
        let rep = minimax_train(&mut phi, &mut psi, &problem, &cfg)?;
        let (_, lin) = linear_baseline(&problem, a.validation_size, cfg.seed)?;
        println!(
            "run {r}: best UVP {:.4}% at outer {}, validation UVP {:.4}%, linear baseline {:.4}%",
            rep.best_uvp, rep.best_outer, rep.final_uvp, lin
        );
        let val = problem.sample_source(&mut rng::stream("ot/marginal", seed, r), a.validation_size);
        let est = transport(&psi, &val)?;
        let exact = problem.map(&val);
        let lo = est.iter().chain(&exact).copied().fold(f64::INFINITY, f64::min);
        let hi = est.iter().chain(&exact).copied().fold(f64::NEG_INFINITY, f64::max);
        let hi = if hi > lo { hi } else { lo + 1.0 };
        let mut dens = Vec::new();
        let mut hist = Vec::new();
        for (name, s) in [("estimate", &est), ("target", &exact)] {
            for m in marginal_report(s, a.dim, lo, hi, 50, 201)? {
                for (x, v) in m.grid.iter().zip(&m.kde) {
                    dens.push(DensityRow { run: r, sample: name, coord: m.coord, x: *x, density: *v });
                }
                for (b, c) in m.counts.iter().enumerate() {
                    hist.push(HistogramRow { run: r, sample: name, coord: m.coord, left: m.edges[b], right: m.edges[b + 1], count: *c });
                }
            }
        }
        let mut slices = Vec::new();
        for k in 0..a.dim {
            for (x, e, t) in map_slice(&psi, &problem, k, 0.5, a.slice_points)? {
                slices.push(SliceRow { coord: k, x, estimate: e, exact: t });
            }
        }
        Ok((phi, psi, rep, lin, dens, hist, slices))
    })?;
    let mut out = Outputs::new(&a.common.out)?;
    let mut rows = Vec::new();
    let mut trace = Vec::new();
    let mut dens = Vec::new();
    let mut hist = Vec::new();
    for (r, (phi, psi, rep, lin, d, h, slices)) in results.into_iter().enumerate() {
        out.checkpoint(&format!("ot_phi_run{r}.json"), &phi)?;
        out.checkpoint(&format!("ot_psi_run{r}.json"), &psi)?;
        out.csv(&format!("ot_slice_run{r}.csv"), &slices)?;
        let row = |method: String, p: usize, neurons: String, best: f64, fin: f64, iters: usize| OtRow {
            benchmark: benchmark.to_string(),
            method,
            d: a.dim,
            p,
            neurons,
            run: r,
            best_uvp: best,
            final_uvp: fin,
            outer_iters: iters,
        };
        let p = if pot.family == Family::Icnn { 0 } else { pot.p };
        rows.push(row(method.clone(), p, neurons.clone(), rep.best_uvp, rep.final_uvp, rep.best_outer));
        rows.push(row("linear".into(), 0, String::new(), lin, lin, 0));
        trace.extend(rep.trace.iter().map(|&(outer, u)| OtTraceRow { run: r as u64, outer, test_uvp: u }));
        dens.extend(d);
        hist.extend(h);
    }
    out.csv("ot.csv", &rows)?;
    out.csv("ot_trace.csv", &trace)?;
    out.csv("marginals.csv", &dens)?;
    out.csv("histograms.csv", &hist)?;
    out.manifest("ot", &json!({ "args": a, "potentials": pot, "minimax": base }))?;
    Ok(true)
}

#[derive(Serialize)]
struct AppendixRow {
    function: usize,
    method: String,
    #[serde(rename = "P")]
    p: usize,
    run: u64,
    iterations: usize,
    mse: f64,
    wall_seconds: f64,
}

#[derive(Serialize)]
struct CurveRow {
    x: f64,
    target: f64,
    model: f64,
}

pub fn appendix_1d(a: &AppendixArgs) -> AnyResult<bool> {
    let functions: Vec<usize> = match a.function {
        Some(i) if (1..=4).contains(&i) => vec![i],
        Some(i) => return Err(format!("--function must be 1 to 4, got {i}").into()),
        None => vec![1, 2, 3, 4],
    };
    let net = a.net.resolve(NetDefaults { family: Family::P1, adapt: true, layers: 0, neurons: 1, p: 10 })?;
    let cfg = a.train.resolve(FitConfig { lr: 5e-2, ..FitConfig::default() })?;
    let domain = Hypercube::cube(1, -10.0, 10.0)?;
    let spec = net.spec(domain.clone())?;
    if !matches!(net.family, Family::P1 | Family::Cubic | Family::Kan) {
        return Err("appendix-1d fits a KAN family (p1, cubic or kan)".into());
    }
    let seed = a.common.seed;
    let xs = linspace(-10.0, 10.0, a.points.max(2));
    let mut out = Outputs::new(&a.common.out)?;
    let mut rows = Vec::new();
    for &i in &functions {
        let target = move |x: &[f64]| appendix(i, x[0]).unwrap_or(f64::NAN);
        let name = format!("appendix/f{i}");
        let results = run_all(&a.common, |r| {
            let mut model = new_model(&spec, &name, seed, r)?;
            let rep = mse_fit(&mut model, &target, &domain, &seeded_fit(&cfg, &name, seed, r))?;
            println!("f{i} run {r}: validation mse {:.4e}", rep.val_mse);
            Ok((model, rep))
        })?;
        for (r, (model, rep)) in results.iter().enumerate() {
            let pred = model.predict(&xs)?;
            let curve: Vec<CurveRow> =
                xs.iter().zip(&pred).map(|(&x, &m)| CurveRow { x, target: target(&[x]), model: m }).collect();
            out.csv(&format!("appendix_f{i}_run{r}.csv"), &curve)?;
            let layer = &model.layers().ok_or("single-layer model expected")?[0];
            let verts = layer.nodal_table(&model.store, &model.boxes()[0]).vertices(0, net.p).to_vec();
            let at = model.predict(&verts)?;
            let vrows: Vec<CurveRow> =
                verts.iter().zip(&at).map(|(&x, &m)| CurveRow { x, target: target(&[x]), model: m }).collect();
            out.csv(&format!("appendix_f{i}_run{r}_vertices.csv"), &vrows)?;
            out.checkpoint(&format!("appendix_f{i}_run{r}.json"), model)?;
            rows.push(AppendixRow {
                function: i,
                method: net.label(),
                p: net.p,
                run: r as u64,
                iterations: rep.iterations,
                mse: rep.val_mse,
                wall_seconds: rep.wall_seconds,
            });
        }
    }
    out.csv("appendix.csv", &rows)?;
    out.manifest("appendix-1d", &json!({ "args": a, "network": net, "train": cfg }))?;
    Ok(true)
}

#[derive(Serialize)]
struct OracleRow {
    trial: usize,
    dim: usize,
    sup_error: f64,
    passed: bool,
}

/// Tolerance of the max-affine construction.
const ORACLE_TOL: f64 = 1e-10;

pub fn oracle_maxaffine(a: &OracleArgs) -> AnyResult<bool> {
    if a.dim == 0 || a.trials == 0 {
        return Err("--dim and --trials must be positive".into());
    }
    let per_axis = a.per_axis.unwrap_or(match a.dim {
        1 => 10_001,
        2 => 201,
        3 => 41,
        _ => 11,
    });
    if per_axis < 2 {
        return Err("--per-axis must be at least 2".into());
    }
    let mut r = rng::stream("oracle", a.common.seed, 0);
    let mut rows = Vec::new();
    for t in 0..a.trials {
        let lower: Vec<f64> = (0..a.dim).map(|_| r.random_range(-2.0..0.0)).collect();
        let upper: Vec<f64> = lower.iter().map(|l| l + r.random_range(0.5..3.0)).collect();
        let domain = Hypercube::new(lower, upper)?;
        let mut affine = || -> (Vec<f64>, f64) { ((0..a.dim).map(|_| r.random_range(-2.0..2.0)).collect(), r.random_range(-1.0..1.0)) };
        let (a1, b1) = affine();
        let (a2, b2) = affine();
        let err = max_affine_error(&a1, b1, &a2, b2, &domain, per_axis)?;
        let passed = err <= ORACLE_TOL;
        println!("{} trial {t:>3} d={} sup error {err:.3e}", if passed { "PASS" } else { "FAIL" }, a.dim);
        rows.push(OracleRow { trial: t, dim: a.dim, sup_error: err, passed });
    }
    let worst = rows.iter().map(|r| r.sup_error).fold(0.0, f64::max);
    println!("max sup error {worst:.3e} over {} trials (tolerance {ORACLE_TOL:.0e})", a.trials);
    let mut out = Outputs::new(&a.common.out)?;
    out.csv("oracle.csv", &rows)?;
    out.manifest("oracle-maxaffine", &json!({ "args": a, "per_axis": per_axis }))?;
    Ok(rows.iter().all(|r| r.passed))
}

pub fn verify(a: &VerifyArgs) -> AnyResult<bool> {
    let mut ok = true;
    for c in run_suite(a.seed) {
        ok &= c.passed;
        println!("{c}");
    }
    let corrupted = corrupted_checkpoint_rejected(a.seed);
    ok &= corrupted.is_ok();
    match corrupted {
        Ok(msg) => println!("PASS corrupted checkpoint rejected      ({msg})"),
        Err(e) => println!("FAIL corrupted checkpoint rejected      ({e})"),
    }
    if let Some(path) = &a.checkpoint {
        match Checkpoint::load(path) {
            Ok(m) => println!(
                "PASS load {}  family {} parameters {}",
                path.display(),
                m.spec.family,
                m.num_params()
            ),
            Err(e) => {
                println!("FAIL load {}: {e}", path.display());
                ok = false;
            }
        }
    }
    Ok(ok)
}

/// Writes a checkpoint, truncates it and expects loading to fail.
fn corrupted_checkpoint_rejected(seed: u64) -> AnyResult<String> {
    let model = random_model(Family::P1, 2, 2, 4, 5, seed)?;
    let path = std::env::temp_dir().join(format!("ickan-verify-{}-{seed}.json", std::process::id()));
    Checkpoint::save(&model, &path)?;
    let text = std::fs::read(&path)?;
    std::fs::write(&path, &text[..text.len() / 2])?;
    let result = Checkpoint::load(Path::new(&path));
    let _ = std::fs::remove_file(&path);
    match result {
        Ok(_) => Err("a truncated checkpoint loaded without error".into()),
        Err(e) => Ok(e.to_string()),
    }
}
