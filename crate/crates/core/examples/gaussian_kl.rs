//! Denoising under Gaussian noise with the moment-matched KL objective:
//! the residual should end up with mean near 0 and variance near sigma^2.

use cdim::constraint::{empirical_moments, residual_additive, ConstraintSpec};
use cdim::measurement::{identity, observe, NoiseModel};
use cdim::rng::{stream_rng, streams};
use cdim::schedule::make_linear_schedule;
use cdim::solver::{cdim_solve_kl, SolverConfig, StepMode};
use cdim::tasks::default_prior;

fn main() -> cdim::Result<()> {
    let sigma = 0.05;
    let schedule = make_linear_schedule(1000, 1e-4, 0.02)?;
    let prior = default_prior(16)?;
    let op = identity(16);
    let spec = ConstraintSpec::kl_gaussian(sigma * sigma)?;
    let cfg = SolverConfig {
        step_mode: StepMode::DpsResidual,
        eta_scale: 0.008,
        ..Default::default()
    };
    println!("seed  residual mean  variance / sigma^2");
    for seed in 0..8u64 {
        let x = prior.sample(&mut stream_rng(seed, streams::GROUND_TRUTH));
        let y = observe(op.as_ref(), &x, &NoiseModel::Gaussian { sigma }, seed)?;
        let r = cdim_solve_kl(&prior, &schedule, op.as_ref(), &y, &spec, &cfg, seed)?;
        let (m, v) = empirical_moments(&residual_additive(&y, &op.apply(&r.x0)?)?)?;
        println!("{seed:>4}  {m:>13.4}  {:>18.3}", v / (sigma * sigma));
    }
    Ok(())
}
