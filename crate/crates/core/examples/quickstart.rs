//! Fit a convex P1 network to a convex function of two variables, then
//! check convexity, read the input gradient and round-trip a checkpoint.
//!
//! cargo run --release -p ickan --example quickstart

use ickan::grid::Hypercube;
use ickan::networks::{Checkpoint, Family, Model, NetworkSpec};
use ickan::training::{mse_fit, FitConfig};
use ickan::verify::midpoint_violation;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ickan::Result<()> {
    let domain = Hypercube::cube(2, -2.0, 2.0)?;
    let target = |x: &[f64]| x[0].abs() + 0.5 * x[1] * x[1] + x[0] * x[1] / 4.0;

    let spec = NetworkSpec::ickan(Family::P1, domain.clone(), vec![8, 8], 10, true);
    let mut model = Model::new(spec, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("{} parameters", model.num_params());

    let cfg = FitConfig { iterations: 3000, validation: 20_000, eval_every: 250, ..FitConfig::default() };
    let report = mse_fit(&mut model, &target, &domain, &cfg)?;
    println!("validation mse {:.3e} after {} steps", report.val_mse, report.iterations);

    let worst = midpoint_violation(&model, &mut ChaCha8Rng::seed_from_u64(1), 1000)?;
    println!("largest midpoint-convexity violation {worst:.1e}");

    let (value, grad) = model.value_and_gradient(&[1.0, 0.5])?;
    println!("f(1, 0.5) = {:.4} (target {:.4}), gradient {:?}", value[0], target(&[1.0, 0.5]), grad);

    let path = std::env::temp_dir().join("ickan-quickstart.json");
    let hash = Checkpoint::save(&model, &path)?;
    let back = Checkpoint::load(&path)?;
    println!("checkpoint {} ({hash}) reloads to {:.4}", path.display(), back.predict(&[1.0, 0.5])?[0]);
    Ok(())
}
