//! Noise that takes one of two values: the bucketed KL pushes the residual
//! histogram toward the two spikes, which a Gaussian model cannot express.

use cdim::constraint::{discrete_kl, evaluate_prediction, residual_additive};
use cdim::measurement::{identity, observe, NoiseModel};
use cdim::rng::{stream_rng, streams};
use cdim::schedule::make_linear_schedule;
use cdim::solver::{cdim_solve_kl, SolverConfig};
use cdim::tasks::{bimodal_spec, default_prior};

fn main() -> cdim::Result<()> {
    let (amplitude, prob) = (0.75, 0.5);
    let schedule = make_linear_schedule(1000, 1e-4, 0.02)?;
    let prior = default_prior(16)?;
    let op = identity(16);
    let spec = bimodal_spec(amplitude, prob)?;
    let cfg = SolverConfig {
        eta_scale: 0.03,
        ..Default::default()
    };
    for seed in 0..5u64 {
        let x = prior.sample(&mut stream_rng(seed, streams::GROUND_TRUTH));
        let y = observe(op.as_ref(), &x, &NoiseModel::Bimodal { amplitude, prob }, seed)?;
        let r = cdim_solve_kl(&prior, &schedule, op.as_ref(), &y, &spec, &cfg, seed)?;
        let fit = op.apply(&r.x0)?;
        let kl = evaluate_prediction(&spec, &y, &fit)?.value;
        let res = residual_additive(&y, &fit)?;
        let up = res.iter().filter(|v| **v > 0.0).count();
        let rmse = (r.x0.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 16.0).sqrt();
        println!("seed {seed}: KL {kl:.2e}, {up}/16 positive residuals, rmse {rmse:.4}");
        if seed == 0 {
            if let cdim::constraint::Objective::KlDiscrete(t) = &spec.objective {
                let d = discrete_kl(&res, t)?;
                println!("  histogram {:?}", d.histogram.iter().map(|p| format!("{p:.2}")).collect::<Vec<_>>());
            }
        }
    }
    Ok(())
}
