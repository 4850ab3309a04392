//! Exact-constraint recovery: inpaint half of a signal observed without
//! noise, finishing with the conjugate-gradient projection.

use cdim::measurement::{half_mask, observe, NoiseModel};
use cdim::rng::{stream_rng, streams};
use cdim::schedule::make_linear_schedule;
use cdim::solver::{cdim_solve_l2, SolverConfig};
use cdim::tasks::default_prior;

fn main() -> cdim::Result<()> {
    let schedule = make_linear_schedule(1000, 1e-4, 0.02)?;
    let prior = default_prior(16)?;
    let op = half_mask(16)?;
    let x = prior.sample(&mut stream_rng(0, streams::GROUND_TRUTH));
    let y = observe(op.as_ref(), &x, &NoiseModel::None, 0)?;

    let cfg = SolverConfig {
        noiseless: true,
        ..Default::default()
    };
    let r = cdim_solve_l2(&prior, &schedule, op.as_ref(), &y, 0.0, &cfg, 1)?;
    let fit = op.apply(&r.x0)?;
    let sup = y.iter().zip(&fit).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("model evaluations: {}", r.model_evals);
    if let Some(p) = &r.final_projection {
        println!("final projection: {} iterations, {} evaluations", p.iterations, p.evals);
    }
    println!("max |y - A x0| = {sup:.2e}");
    println!("{:>3} {:>9} {:>9}", "i", "truth", "estimate");
    for (i, (a, b)) in x.iter().zip(&r.x0).enumerate() {
        println!("{i:>3} {a:>9.4} {b:>9.4}");
    }
    Ok(())
}
