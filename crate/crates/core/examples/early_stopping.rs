//! Early stopping on the residual variance: inner iterations halt once the
//! residual is as small as the noise, which saves model evaluations.

use cdim::measurement::{half_mask, observe, NoiseModel};
use cdim::rng::{stream_rng, streams};
use cdim::schedule::make_linear_schedule;
use cdim::solver::{cdim_solve_l2, SolverConfig};
use cdim::tasks::default_prior;

fn main() -> cdim::Result<()> {
    let sigma = 0.05;
    let schedule = make_linear_schedule(1000, 1e-4, 0.02)?;
    let prior = default_prior(16)?;
    let op = half_mask(16)?;
    let cfg = SolverConfig {
        delta: 20,
        k: 5,
        ..Default::default()
    };
    println!("seed  var_r    evals  stopped steps  residual var");
    for seed in 0..4u64 {
        let x = prior.sample(&mut stream_rng(seed, streams::GROUND_TRUTH));
        let y = observe(op.as_ref(), &x, &NoiseModel::Gaussian { sigma }, seed)?;
        for var_r in [0.0, sigma * sigma] {
            let r = cdim_solve_l2(&prior, &schedule, op.as_ref(), &y, var_r, &cfg, seed)?;
            let stopped = r.trajectory.iter().filter(|s| s.early_stopped).count();
            let last = r.trajectory.last().and_then(|s| s.residual_vars.last()).copied().unwrap_or(f64::NAN);
            println!("{seed:>4}  {var_r:<7.4}  {:>5}  {stopped:>13}  {last:.5}", r.model_evals);
        }
    }
    Ok(())
}
