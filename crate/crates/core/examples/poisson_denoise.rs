//! Photon-counting noise: a positive signal seen through a detector with
//! gain, denoised by matching Pearson residuals to a unit normal.

use cdim::constraint::{empirical_moments, residual_pearson, ConstraintSpec};
use cdim::measurement::{observe, scale_operator, NoiseModel};
use cdim::rng::{stream_rng, streams};
use cdim::schedule::make_linear_schedule;
use cdim::solver::{cdim_solve_kl, SolverConfig};
use cdim::tasks::{positive_prior, POISSON_GAIN};

fn main() -> cdim::Result<()> {
    let scale = 0.05;
    let schedule = make_linear_schedule(1000, 1e-4, 0.02)?;
    let prior = positive_prior(16)?;
    let op = scale_operator(16, POISSON_GAIN)?;
    let spec = ConstraintSpec::pearson(scale)?;
    let cfg = SolverConfig {
        eta_scale: 0.1,
        ..Default::default()
    };
    println!("seed  pearson mean  pearson var  rmse");
    for seed in 0..8u64 {
        let x = prior.sample(&mut stream_rng(seed, streams::GROUND_TRUTH));
        let y = observe(op.as_ref(), &x, &NoiseModel::Poisson { scale }, seed)?;
        let r = cdim_solve_kl(&prior, &schedule, op.as_ref(), &y, &spec, &cfg, seed)?;
        let (m, v) = empirical_moments(&residual_pearson(&y, &op.apply(&r.x0)?, scale, 1e-6)?)?;
        let rmse = (r.x0.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 16.0).sqrt();
        println!("{seed:>4}  {m:>12.3}  {v:>11.3}  {rmse:.4}");
    }
    Ok(())
}
