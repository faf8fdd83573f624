//! Acceptance run: every criterion at its stated tolerance and time limit,
//! one PASS/FAIL line each.
//!
//! `ICKAN_ACCEPTANCE=5,7` restricts the run to the listed criteria.
//!
//! Criterion 6 asks a convex fit of a concave quadratic to err ten times more
//! at the centre than at the edges. The L2-best convex fit of a concave
//! function is affine, and the residual of the best line through
//! `1 + 2x - x^2/2` on `[-2, 2]` is twice as large at the edges as at the
//! centre, so the ratio approaches 0.5. The criterion is run and reported
//! as measured; it is the only one whose failure does not fail this test.

use std::time::{Duration, Instant};

use ickan::grid::Hypercube;
use ickan::networks::{Activation, Family, Model, NetworkSpec};
use ickan::training::{
    center_edge_ratio, error_profile, kms_matrix, lq_cost_sample, lq_fit, mse_fit, partial, quadratic_kink, riccati,
    wrong_convexity, FitConfig, LqProblem,
};
use ickan::transport::{
    build_potentials, linear_baseline, minimax_train, uvp, Benchmark, MinimaxConfig, PotentialSpec, TransportProblem,
};
use ickan::verify::{
    box_violation, input_gradient_error, max_affine_error, midpoint_violation, parameter_gradient_error,
    partial_midpoint_violation, random_model, uniform_points,
};
use ickan::{rng, Result};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KNOWN_UNATTAINABLE: &[usize] = &[6];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn c1_convexity() -> Result<Outcome> {
    let mut worst = f64::NEG_INFINITY;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for family in [Family::P1, Family::Cubic, Family::Icnn] {
        for t in 0..50u64 {
            let dim = [1, 2, 4][(t % 3) as usize];
            let depth = 1 + (t / 3 % 3) as usize;
            let p = [5, 10, 20][(t / 9 % 3) as usize];
            let m = random_model(family, dim, depth, 8, p, 1000 + t)?;
            worst = worst.max(midpoint_violation(&m, &mut rng, 1000)?);
        }
    }
    outcome(worst <= 1e-8, format!("150 models, worst midpoint violation {worst:.2e} (tol 1e-8)"))
}

fn c2_gradients() -> Result<Outcome> {
    let mut param: f64 = 0.0;
    let mut input: f64 = 0.0;
    for t in 0..6u64 {
        for family in [Family::P1, Family::Cubic] {
            let m = random_model(family, 1 + (t % 3) as usize, 2, 3, 4 + (t % 2) as usize, 200 + t)?;
            let x = uniform_points(&mut ChaCha8Rng::seed_from_u64(t), &m.spec.domain.inflate(-0.05), 6);
            param = param.max(parameter_gradient_error(&m, &x, false, t, 1e-6)?);
            if family == Family::Cubic {
                param = param.max(parameter_gradient_error(&m, &x, true, t, 1e-6)?);
                let m3 = random_model(Family::Cubic, 3, 1 + (t % 3) as usize, 5, 6, 300 + t)?;
                let x3 = uniform_points(&mut ChaCha8Rng::seed_from_u64(t), &m3.spec.domain.inflate(-0.05), 30);
                input = input.max(input_gradient_error(&m3, &x3, 1e-6)?);
            }
        }
    }
    outcome(
        param <= 1e-4 && input <= 1e-4,
        format!("parameter gradient rel err {param:.2e}, cubic input gradient rel err {input:.2e} (tol 1e-4)"),
    )
}

fn c3_oracle() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for t in 0..20 {
        let dim = 1 + t % 3;
        let lower: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..0.0)).collect();
        let upper: Vec<f64> = lower.iter().map(|l| l + rng.random_range(0.5..3.0)).collect();
        let dom = Hypercube::new(lower, upper)?;
        let mut affine = || -> (Vec<f64>, f64) {
            ((0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(), rng.random_range(-1.0..1.0))
        };
        let (a1, b1) = affine();
        let (a2, b2) = affine();
        let per_axis = [10_001, 201, 41][dim - 1];
        worst = worst.max(max_affine_error(&a1, b1, &a2, b2, &dom, per_axis)?);
    }
    outcome(worst <= 1e-10, format!("20 trials in d=1..3, sup error {worst:.2e} (tol 1e-10)"))
}

fn c4_boxes() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for t in 0..20u64 {
        let family = if t % 2 == 0 { Family::P1 } else { Family::Cubic };
        let m = random_model(family, 1 + (t % 4) as usize, 2 + (t % 3) as usize, 6, [5, 10, 20][(t % 3) as usize], 400 + t)?;
        let x = uniform_points(&mut ChaCha8Rng::seed_from_u64(t), &m.spec.domain, 10_000);
        worst = worst.max(box_violation(&m, &x)?);
    }
    outcome(worst <= 1e-9, format!("20 models x 10^4 points, worst excursion {worst:.2e} (tol 1e-9)"))
}

fn c5_regression() -> Result<Outcome> {
    let dom = Hypercube::cube(3, -2.0, 2.0)?;
    let a = kms_matrix(3);
    let target = move |x: &[f64]| quadratic_kink(x, &a);
    let cfg = FitConfig { iterations: 20_000, ..FitConfig::default() };
    let mut kan = Model::new(NetworkSpec::ickan(Family::P1, dom.clone(), vec![20, 20], 20, true), &mut rng::stream("acceptance/5", 0, 0))?;
    let start = Instant::now();
    let k = mse_fit(&mut kan, &target, &dom, &cfg)?;
    let t_kan = start.elapsed();
    let mut icnn = Model::new(NetworkSpec::icnn(dom.clone(), vec![64, 64], Activation::Relu), &mut rng::stream("acceptance/5", 0, 1))?;
    let start = Instant::now();
    let i = mse_fit(&mut icnn, &target, &dom, &cfg)?;
    let t_icnn = start.elapsed();
    let per_run = Duration::from_secs(15 * 60);
    outcome(
        k.val_mse <= 5e-3 && i.val_mse <= 5e-3 && t_kan <= per_run && t_icnn <= per_run,
        format!(
            "P1-ICKAN adapt 2x20 P=20: {:.3e} ({:.0}s); ICNN 2x64: {:.3e} ({:.0}s) (tol 5e-3)",
            k.val_mse,
            t_kan.as_secs_f64(),
            i.val_mse,
            t_icnn.as_secs_f64()
        ),
    )
}

fn c6_wrong_convexity() -> Result<Outcome> {
    let dom = Hypercube::cube(1, -2.0, 2.0)?;
    let target = |x: &[f64]| wrong_convexity(x).expect("d = 1");
    let mut m = Model::new(NetworkSpec::ickan(Family::P1, dom.clone(), vec![10], 10, true), &mut rng::stream("acceptance/6", 0, 0))?;
    let rep = mse_fit(&mut m, &target, &dom, &FitConfig::default())?;
    let viol = midpoint_violation(&m, &mut ChaCha8Rng::seed_from_u64(6), 1000)?;
    let r = center_edge_ratio(&error_profile(&m, &target, -2.0, 2.0, 401)?);
    outcome(
        viol <= 1e-8 && r.ratio >= 10.0,
        format!(
            "mse {:.3e}, convexity violation {viol:.1e}; centre error {:.3} / edge error {:.3} = {:.3} (need >= 10)",
            rep.val_mse, r.center, r.edge, r.ratio
        ),
    )
}

fn c7_lq() -> Result<Outcome> {
    let ric3 = riccati(&LqProblem::identity(2, 3)?)?;
    let i2 = DMatrix::<f64>::identity(2, 2);
    let seq = (&ric3.p[2] - &i2 * 1.5).abs().max().max((&ric3.p[1] - &i2 * 1.6).abs().max());

    let pb = LqProblem::identity(2, 5)?;
    let ric = riccati(&pb)?;
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let mut worst_z: f64 = 0.0;
    for _ in 0..5 {
        let x0 = [r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)];
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| lq_cost_sample(&pb, &ric, &x0, &mut r)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1) as f64;
        worst_z = worst_z.max((mean - ric.value(&x0)).abs() / (var / n as f64).sqrt());
    }

    let mut m = Model::new(NetworkSpec::ickan(Family::P1, pb.x0_box.clone(), vec![10, 10], 10, true), &mut rng::stream("acceptance/7", 0, 0))?;
    let rep = lq_fit(&mut m, &pb, &FitConfig::default(), 61)?;
    outcome(
        seq <= 1e-12 && worst_z <= 3.0 && rep.max_rel_error <= 0.05,
        format!(
            "Riccati deviation {seq:.1e}; Monte-Carlo worst |z| {worst_z:.2}; P1-ICKAN adapt 2x10 P=10 max rel error {:.2}% (tol 5%)",
            100.0 * rep.max_rel_error
        ),
    )
}

fn ot_run(benchmark: Benchmark, d: usize) -> Result<(f64, f64)> {
    let pb = TransportProblem::new(benchmark, d)?;
    let cfg = MinimaxConfig::default();
    let (mut phi, mut psi) = build_potentials(&pb, &PotentialSpec::cubic_default(d, 10), &cfg)?;
    let rep = minimax_train(&mut phi, &mut psi, &pb, &cfg)?;
    Ok((rep.best_uvp, rep.final_uvp))
}

fn c8_ot_identity() -> Result<Outcome> {
    let (best, fin) = ot_run(Benchmark::Identity, 2)?;
    outcome(best <= 0.5, format!("d=2, 3000 outer iterations: best UVP {best:.4}% (validation {fin:.4}%) (tol 0.5%)"))
}

fn c9_ot_tensorized() -> Result<Outcome> {
    let (b1, f1) = ot_run(Benchmark::Tensorized, 1)?;
    let (b2, f2) = ot_run(Benchmark::Tensorized, 2)?;
    let (_, lin) = linear_baseline(&TransportProblem::new(Benchmark::Tensorized, 2)?, 1 << 14, 9)?;
    outcome(
        b1 <= 1.0 && b2 <= 1.0 && (0.3..=0.8).contains(&lin),
        format!(
            "C-ICKAN adapt P=10 best UVP d=1 {b1:.4}% (validation {f1:.4}%), d=2 {b2:.4}% (validation {f2:.4}%) (tol 1%); linear d=2 {lin:.3}% (need 0.3..0.8)"
        ),
    )
}

fn c10_uvp() -> Result<Outcome> {
    let pb = TransportProblem::new(Benchmark::Tensorized, 2)?;
    let mut r = ChaCha8Rng::seed_from_u64(10);
    let x = pb.sample_source(&mut r, 1 << 14);
    let truth = pb.map(&x);
    let exact = uvp(&truth, &truth, &truth, 2)?;
    let other = pb.sample_target(&mut r, 1 << 14);
    let mean: Vec<f64> = (0..2).map(|k| other.iter().skip(k).step_by(2).sum::<f64>() / (1 << 14) as f64).collect();
    let constant: Vec<f64> = (0..1 << 14).flat_map(|_| mean.clone()).collect();
    let c = uvp(&constant, &truth, &truth, 2)?;
    outcome(exact == 0.0 && (c - 100.0).abs() <= 2.0, format!("UVP(T*) = {exact}, constant-mean UVP {c:.3} (need 100 +- 2)"))
}

fn c11_pickan() -> Result<Outcome> {
    let dom = Hypercube::cube(2, -2.0, 2.0)?;
    let target = |x: &[f64]| partial(x[0], x[1]);
    let mut m = Model::new(NetworkSpec::pickan(dom.clone(), 1, 2, 40, 40, true), &mut rng::stream("acceptance/11", 0, 0))?;
    let rep = mse_fit(&mut m, &target, &dom, &FitConfig::default())?;
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..20 {
        let x = -2.0 + 4.0 * (i as f64 + 0.5) / 20.0;
        worst = worst.max(partial_midpoint_violation(&m, &[x], &mut r, 1000)?);
    }
    outcome(
        rep.val_mse <= 1e-2 && worst <= 1e-8,
        format!("2 layers, 40 neurons, P=40: mse {:.3e} (tol 1e-2); convexity-in-y violation {worst:.1e} at 20 x values", rep.val_mse),
    )
}

type Criterion = (usize, &'static str, u64, fn() -> Result<Outcome>);

const CRITERIA: [Criterion; 11] = [
    (1, "structural convexity", 120, c1_convexity),
    (2, "gradient suite", 120, c2_gradients),
    (3, "max-affine oracle", 60, c3_oracle),
    (4, "box soundness", 60, c4_boxes),
    (5, "regression desk scale", 30 * 60, c5_regression),
    (6, "wrong-convexity probe", 5 * 60, c6_wrong_convexity),
    (7, "LQ value function", 15 * 60, c7_lq),
    (8, "OT identity", 20 * 60, c8_ot_identity),
    (9, "OT tensorized", 45 * 60, c9_ot_tensorized),
    (10, "UVP identities", 60, c10_uvp),
    (11, "PICKAN desk scale", 15 * 60, c11_pickan),
];

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("ICKAN_ACCEPTANCE").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut unexpected = Vec::new();
    for (id, name, limit, run) in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        let (passed, detail) = match result {
            Ok(o) => (o.passed && secs <= limit as f64, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let note = if !passed && KNOWN_UNATTAINABLE.contains(&id) { " [known unattainable]" } else { "" };
        println!(
            "{} criterion {id:>2} {name}: {detail}; {secs:.0}s of {limit}s{note}",
            if passed { "PASS" } else { "FAIL" }
        );
        if !passed && !KNOWN_UNATTAINABLE.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("criteria failed: {unexpected:?}");
        std::process::exit(1);
    }
}
