//! Trains a small MLP denoiser on draws from a mixture, checks it against
//! the analytic posterior mean, saves it and reuses it inside the solver.

use cdim::measurement::{half_mask, observe, NoiseModel};
use cdim::oracle::sample_gmm;
use cdim::rng::{stream_rng, streams};
use cdim::schedule::make_linear_schedule;
use cdim::score::{load_model, save_model, train_mlp_denoiser, AnyModel, ScoreModel, TrainingConfig};
use cdim::solver::{cdim_solve_l2, SolverConfig};
use cdim::tasks::default_prior;

fn main() -> cdim::Result<()> {
    let schedule = make_linear_schedule(1000, 1e-4, 0.02)?;
    let prior = default_prior(8)?;
    let data = sample_gmm(&prior, 5000, 1)?;
    let cfg = TrainingConfig {
        epochs: 20,
        ..TrainingConfig::default()
    };
    let (mlp, report) = train_mlp_denoiser(&data, &schedule, &cfg, 2)?;
    for (e, l) in report.epoch_loss.iter().enumerate().step_by(5) {
        println!("epoch {e:>3}  loss {l:.4}");
    }

    let at = schedule.at(300);
    let probe = sample_gmm(&prior, 1, 3)?.remove(0);
    let learned = mlp.predict_xhat0(&probe, at)?;
    let exact = prior.posterior_mean(&probe, at.alpha_bar)?;
    let mae = learned.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum::<f64>() / 8.0;
    println!("mean |learned - analytic| at t = 300: {mae:.4}");

    let path = std::env::temp_dir().join("cdim-example-denoiser.bin");
    save_model(&path, &AnyModel::Mlp(mlp))?;
    let model = load_model(&path)?;
    let op = half_mask(8)?;
    let x = prior.sample(&mut stream_rng(4, streams::GROUND_TRUTH));
    let y = observe(op.as_ref(), &x, &NoiseModel::Gaussian { sigma: 0.05 }, 4)?;
    let r = cdim_solve_l2(&model, &schedule, op.as_ref(), &y, 0.0025, &SolverConfig::default(), 4)?;
    let rmse = (r.x0.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 8.0).sqrt();
    println!("inpainting with the reloaded model from {}: rmse {rmse:.4}", path.display());
    Ok(())
}
