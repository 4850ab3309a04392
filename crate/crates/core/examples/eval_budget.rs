//! Trades outer steps for inner steps at a fixed budget of 200 model
//! evaluations and reports quality and time per configuration.

use std::time::Instant;

use cdim::harness::psnr;
use cdim::measurement::{half_mask, observe, NoiseModel};
use cdim::rng::{stream_rng, streams};
use cdim::schedule::make_linear_schedule;
use cdim::solver::{cdim_solve_l2, SolverConfig};
use cdim::tasks::default_prior;

fn main() -> cdim::Result<()> {
    let schedule = make_linear_schedule(1000, 1e-4, 0.02)?;
    let prior = default_prior(16)?;
    let op = half_mask(16)?;
    println!("T'  K   evals  mean psnr  seconds");
    for (t_prime, k) in [(5, 39), (10, 19), (25, 7), (50, 3)] {
        let cfg = SolverConfig {
            delta: 1000 / t_prime,
            k,
            ..Default::default()
        };
        let (mut total, mut evals) = (0.0, 0);
        let start = Instant::now();
        for seed in 0..10u64 {
            let x = prior.sample(&mut stream_rng(seed, streams::GROUND_TRUTH));
            let y = observe(op.as_ref(), &x, &NoiseModel::Gaussian { sigma: 0.05 }, seed)?;
            let r = cdim_solve_l2(&prior, &schedule, op.as_ref(), &y, 0.0, &cfg, seed)?;
            total += psnr(&r.x0, &x).0;
            evals = r.model_evals;
        }
        println!("{t_prime:<3} {k:<3} {evals:>5}  {:>9.2}  {:.4}", total / 10.0, start.elapsed().as_secs_f64());
    }
    Ok(())
}
