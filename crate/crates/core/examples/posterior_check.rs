//! Compares a cloud of solver outputs against exact posterior draws with
//! the energy distance and a split-sample permutation null.

use cdim::measurement::{half_mask, observe, NoiseModel};
use cdim::oracle::{energy_distance, exact_posterior, quantile, sample_gmm, split_null};
use cdim::rng::{stream_rng, streams};
use cdim::schedule::make_linear_schedule;
use cdim::solver::{cdim_solve_l2, SolverConfig, StepMode};
use cdim::tasks::default_prior;
use rayon::prelude::*;

fn main() -> cdim::Result<()> {
    let sigma = 0.05;
    let n = 300;
    let schedule = make_linear_schedule(1000, 1e-4, 0.02)?;
    let prior = default_prior(16)?;
    let op = half_mask(16)?;
    let x = prior.sample(&mut stream_rng(0, streams::GROUND_TRUTH));
    let y = observe(op.as_ref(), &x, &NoiseModel::Gaussian { sigma }, 0)?;

    let post = exact_posterior(&prior, op.as_ref(), sigma * sigma, &y)?;
    println!("posterior component weights {:?}", post.weights());
    let cfg = SolverConfig {
        step_mode: StepMode::DpsResidual,
        eta_scale: 3.0,
        ..Default::default()
    };
    let cloud: Vec<Vec<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|j| cdim_solve_l2(&prior, &schedule, op.as_ref(), &y, sigma * sigma, &cfg, 1000 + j).map(|r| r.x0))
        .collect::<cdim::Result<_>>()?;
    let pool = sample_gmm(&post, 2 * n, 77)?;
    let ed = energy_distance(&cloud, &pool[..n])?;
    let null = split_null(&pool, n, 200, 5)?;
    let q = quantile(&null, 0.99)?;
    println!("energy distance {ed:.5}, null q99 {q:.5}: {}", if ed <= q { "indistinguishable" } else { "distinguishable" });
    Ok(())
}
