//! Calibrates an expected-gradient-norm profile on a few prior draws, then
//! compares the three step-size rules on held-out signals.

use cdim::calibration::{calibrate, save_profile};
use cdim::constraint::{evaluate_prediction, ConstraintSpec};
use cdim::measurement::{half_mask, observe, NoiseModel};
use cdim::oracle::sample_gmm;
use cdim::rng::{stream_rng, streams};
use cdim::schedule::make_linear_schedule;
use cdim::solver::{cdim_solve, SolverConfig, StepMode};
use cdim::tasks::default_prior;

fn main() -> cdim::Result<()> {
    let noise = NoiseModel::Gaussian { sigma: 0.05 };
    let schedule = make_linear_schedule(1000, 1e-4, 0.02)?;
    let prior = default_prior(16)?;
    let op = half_mask(16)?;
    let spec = ConstraintSpec::l2();
    let base = SolverConfig {
        delta: 100,
        k: 10,
        ..Default::default()
    };
    let set = sample_gmm(&prior, 10, 99)?;
    let run = calibrate(&prior, &schedule, op.as_ref(), &spec, &noise, &base, &set, 5)?;
    let path = std::env::temp_dir().join("cdim-example-profile.csv");
    save_profile(&run.profile, &path)?;
    println!("profile saved to {}", path.display());
    for (t, m) in run.profile.grid().iter().zip(run.profile.mean_grad_norm()) {
        println!("  t {t:>4}  E|grad| {m:.4e}");
    }

    let modes = [
        (StepMode::CalibratedExpectation, 0.03),
        (StepMode::DpsResidual, 1.0),
        (StepMode::InstantaneousGrad, 0.1),
    ];
    for (mode, eta_scale) in modes {
        let cfg = SolverConfig {
            step_mode: mode,
            eta_scale,
            profile: Some(run.profile.clone()),
            ..base.clone()
        };
        let mut total = 0.0;
        for seed in 100..110u64 {
            let x = prior.sample(&mut stream_rng(seed, streams::GROUND_TRUTH));
            let y = observe(op.as_ref(), &x, &noise, seed)?;
            let r = cdim_solve(&prior, &schedule, op.as_ref(), &y, &spec, &cfg, seed)?;
            total += evaluate_prediction(&spec, &y, &op.apply(&r.x0)?)?.value;
        }
        println!("{:<24} mean final L2 {:.3e}", mode.name(), total / 10.0);
    }
    Ok(())
}
