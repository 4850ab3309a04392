//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 3 8`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rayon::prelude::*;

use cdim::calibration::calibrate;
use cdim::constraint::{
    empirical_moments, evaluate_prediction, gaussian_kl, objective_value_and_grad, residual_additive,
    residual_pearson, ConstraintSpec, DiscreteTarget, DEFAULT_PEARSON_FLOOR,
};
use cdim::measurement::{blur_operator, gaussian_kernel, half_mask, identity, observe, scale_operator, NoiseModel, Operator};
use cdim::oracle::{energy_distance, exact_posterior, finite_diff_grad, integrate, quantile, sample_gmm, split_null};
use cdim::rng::{standard_normal_vec, stream_rng, streams};
use cdim::schedule::{make_linear_schedule, make_time_grid, NoiseSchedule};
use cdim::score::{GmmPrior, MlpDenoiser, ScoreModel};
use cdim::solver::{cdim_solve_kl, cdim_solve_l2, unconditional_ddim, SolverConfig, StepMode};
use cdim::tasks::{bimodal_spec, default_prior, positive_prior, POISSON_GAIN};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn schedule() -> NoiseSchedule {
    make_linear_schedule(1000, 1e-4, 0.02).unwrap()
}

const SIGMA: f64 = 0.05;
const SIGMA2: f64 = SIGMA * SIGMA;

fn truth(g: &GmmPrior, seed: u64) -> Vec<f64> {
    g.sample(&mut stream_rng(seed, streams::GROUND_TRUTH))
}

fn sup_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    l2(&diff) / l2(b).max(1e-12)
}

fn final_l2(op: &dyn cdim::measurement::LinearOperator, y: &[f64], x0: &[f64]) -> f64 {
    evaluate_prediction(&ConstraintSpec::l2(), y, &op.apply(x0).unwrap()).unwrap().value
}

/// Exact recovery with the noiseless final projection.
fn c1_noiseless() -> Outcome {
    let s = schedule();
    let g = default_prior(16).unwrap();
    let tasks: Vec<(&str, Operator)> = vec![
        ("identity", identity(16)),
        ("half_mask", half_mask(16).unwrap()),
        ("blur", blur_operator(16, gaussian_kernel(1.0).unwrap()).unwrap()),
    ];
    let cfg = SolverConfig {
        noiseless: true,
        noiseless_tol: 1e-5,
        ..Default::default()
    };
    let mut worst = 0.0f64;
    let mut slowest = 0.0f64;
    let mut ok = 0;
    let mut total = 0;
    for (_, op) in &tasks {
        for seed in 0..20u64 {
            let y = observe(op.as_ref(), &truth(&g, seed), &NoiseModel::None, seed).unwrap();
            let t0 = Instant::now();
            let r = cdim_solve_l2(&g, &s, op.as_ref(), &y, 0.0, &cfg, seed).unwrap();
            slowest = slowest.max(t0.elapsed().as_secs_f64());
            let inf = sup_norm(&y, &op.apply(&r.x0).unwrap());
            worst = worst.max(inf);
            total += 1;
            if inf <= 1e-5 {
                ok += 1;
            }
        }
    }
    outcome(
        ok == total && slowest <= 5.0,
        format!("{ok}/{total} solves with |y - A x0|_inf <= 1e-5 (worst {worst:.2e}), slowest solve {slowest:.3}s <= 5s"),
    )
}

/// Analytic posterior means against quadrature (1-D) and self-normalised
/// importance sampling (n = 8).
fn c2_tweedie() -> Outcome {
    let g1 = GmmPrior::new(
        vec![0.5, 0.3, 0.2],
        vec![vec![-1.2], vec![0.4], vec![2.1]],
        vec![vec![0.15], vec![0.05], vec![0.3]],
    )
    .unwrap();
    let mut worst_quad = 0.0f64;
    for &ab in &[0.999f64, 0.9, 0.5, 0.1, 0.01] {
        for &xt in &[-2.0f64, -0.5, 0.3, 0.7, 2.5] {
            let sd2 = 1.0 - ab;
            let lik = |x0: f64| -> f64 {
                let d = xt - ab.sqrt() * x0;
                (-d * d / (2.0 * sd2)).exp()
            };
            let prior = |x0: f64| -> f64 {
                g1.weights()
                    .iter()
                    .zip(g1.means())
                    .zip(g1.variances())
                    .map(|((w, m), v)| w * (-(x0 - m[0]).powi(2) / (2.0 * v[0])).exp() / (std::f64::consts::TAU * v[0]).sqrt())
                    .sum()
            };
            // Break the range around the likelihood peak, which is very
            // narrow as alpha_bar approaches one.
            let c = xt / ab.sqrt();
            let w = 12.0 * (sd2 / ab).sqrt();
            let mut cuts = [-12.0, c - w, c + w, 12.0];
            cuts.iter_mut().for_each(|x| *x = x.clamp(-12.0, 12.0));
            let quad = |f: &dyn Fn(f64) -> f64| -> f64 {
                cuts.windows(2).filter(|p| p[1] > p[0]).map(|p| integrate(f, p[0], p[1], 1e-14).unwrap()).sum()
            };
            let num = quad(&|x| x * prior(x) * lik(x));
            let den = quad(&|x| prior(x) * lik(x));
            let reference = num / den;
            let got = g1.posterior_mean(&[xt], ab).unwrap()[0];
            worst_quad = worst_quad.max((got - reference).abs() / reference.abs());
        }
    }

    let g8 = default_prior(8).unwrap();
    let draws = sample_gmm(&g8, 200_000, 2024).unwrap();
    let mut worst_z = 0.0f64;
    for (case, &ab) in [0.3f64, 0.6, 0.1].iter().enumerate() {
        let mut rng = stream_rng(case as u64, streams::ORACLE);
        let x0 = g8.sample(&mut rng);
        let eps = standard_normal_vec(&mut rng, 8);
        let xt: Vec<f64> = x0.iter().zip(&eps).map(|(a, e)| ab.sqrt() * a + (1.0 - ab).sqrt() * e).collect();
        let logw: Vec<f64> = draws
            .iter()
            .map(|d| -d.iter().zip(&xt).map(|(a, b)| (b - ab.sqrt() * a).powi(2)).sum::<f64>() / (2.0 * (1.0 - ab)))
            .collect();
        let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
        let sw: f64 = w.iter().sum();
        let analytic = g8.posterior_mean(&xt, ab).unwrap();
        for j in 0..8 {
            let est = w.iter().zip(&draws).map(|(wi, d)| wi * d[j]).sum::<f64>() / sw;
            let se = w.iter().zip(&draws).map(|(wi, d)| (wi * (d[j] - est)).powi(2)).sum::<f64>().sqrt() / sw;
            worst_z = worst_z.max((analytic[j] - est).abs() / se);
        }
    }
    outcome(
        worst_quad <= 1e-6 && worst_z <= 3.0,
        format!("quadrature max rel err {worst_quad:.2e} <= 1e-6; importance sampling max |z| {worst_z:.2} <= 3"),
    )
}

/// Vector-Jacobian products and objective gradients against central
/// finite differences.
fn c3_gradients() -> Outcome {
    let s = schedule();
    let g = default_prior(8).unwrap();
    let mlp = MlpDenoiser::init(8, [32, 32], 16, 3).unwrap();
    let mut rng = stream_rng(33, streams::ORACLE);
    let mut report = Vec::new();
    let mut pass = true;

    let models: [(&str, &dyn ScoreModel); 2] = [("gmm vjp", &g), ("mlp vjp", &mlp)];
    for (name, model) in models {
        let mut worst = 0.0f64;
        for probe in 0..100usize {
            let t = 1 + (probe * 97) % 999;
            let at = s.at(t);
            let x = standard_normal_vec(&mut rng, 8);
            let c = standard_normal_vec(&mut rng, 8);
            let vjp = model.xhat0_vjp(&x, at, &c).unwrap();
            let f = |z: &[f64]| {
                let xh = model.predict_xhat0(z, at).unwrap();
                xh.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
            };
            worst = worst.max(rel_err(&vjp, &finite_diff_grad(f, &x, 1e-5)));
        }
        pass &= worst <= 1e-4;
        report.push(format!("{name} {worst:.1e}"));
    }

    let blur = blur_operator(8, gaussian_kernel(1.0).unwrap()).unwrap();
    let specs = [
        ("l2", ConstraintSpec::l2()),
        ("kl_gaussian", ConstraintSpec::kl_gaussian(0.3).unwrap()),
        ("kl_discrete", ConstraintSpec::kl_discrete(DiscreteTarget::gaussian(0.6, 12, 2.4).unwrap())),
        ("pearson", ConstraintSpec::pearson(0.5).unwrap()),
    ];
    for (name, spec) in &specs {
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let op: &dyn cdim::measurement::LinearOperator = blur.as_ref();
            let z = standard_normal_vec(&mut rng, 8);
            let noise = standard_normal_vec(&mut rng, 8);
            let (x, y): (Vec<f64>, Vec<f64>) = if *name == "pearson" {
                let x: Vec<f64> = z.iter().map(|v| 3.0 + 0.5 * v).collect();
                let ax = op.apply(&x).unwrap();
                let y = ax.iter().zip(&noise).map(|(a, e)| a + 0.8 * e).collect();
                (x, y)
            } else {
                let ax = op.apply(&z).unwrap();
                let y = ax.iter().zip(&noise).map(|(a, e)| a + 0.6 * e).collect();
                (z, y)
            };
            let e = objective_value_and_grad(spec, &y, &op.apply(&x).unwrap(), op).unwrap();
            let f = |v: &[f64]| evaluate_prediction(spec, &y, &op.apply(v).unwrap()).unwrap().value;
            let err = rel_err(&e.grad_xhat0, &finite_diff_grad(f, &x, 1e-6));
            worst = worst.max(err);
        }
        pass &= worst <= 1e-4;
        report.push(format!("{name} {worst:.1e}"));
    }
    outcome(pass, format!("max relative error over 100 probes each: {} (<= 1e-4)", report.join(", ")))
}

/// Cloud of L2 solves against exact posterior draws on the half mask.
fn c4_posterior() -> Outcome {
    let start = Instant::now();
    let s = schedule();
    let g = default_prior(16).unwrap();
    let op = half_mask(16).unwrap();
    let seed = 0;
    let y = observe(op.as_ref(), &truth(&g, seed), &NoiseModel::Gaussian { sigma: SIGMA }, seed).unwrap();
    // Best setting of a grid over delta, K, step mode and eta_scale.
    let cfg = SolverConfig {
        delta: 20,
        k: 3,
        step_mode: StepMode::DpsResidual,
        eta_scale: 3.0,
        ..Default::default()
    };
    let cloud: Vec<Vec<f64>> = (0..500u64)
        .into_par_iter()
        .map(|j| cdim_solve_l2(&g, &s, op.as_ref(), &y, SIGMA2, &cfg, 1000 + j).unwrap().x0)
        .collect();
    let post = exact_posterior(&g, op.as_ref(), SIGMA2, &y).unwrap();
    let pool = sample_gmm(&post, 1000, 77).unwrap();
    let ed = energy_distance(&cloud, &pool[..500]).unwrap();
    let null = split_null(&pool, 500, 200, 5).unwrap();
    let q99 = quantile(&null, 0.99).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        ed < q99 && secs <= 600.0,
        format!("energy distance {ed:.4} vs null q99 {q99:.4} (ratio {:.2}), {secs:.1}s <= 600s", ed / q99),
    )
}

/// Final residual statistics for the three noise laws.
fn c5_residuals() -> Outcome {
    let s = schedule();
    let g = default_prior(16).unwrap();
    let op = identity(16);
    let base = SolverConfig {
        delta: 20,
        k: 3,
        ..Default::default()
    };

    let gauss_cfg = SolverConfig {
        step_mode: StepMode::DpsResidual,
        eta_scale: 0.008,
        ..base.clone()
    };
    let spec = ConstraintSpec::kl_gaussian(SIGMA2).unwrap();
    let gauss: Vec<(f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let y = observe(op.as_ref(), &truth(&g, seed), &NoiseModel::Gaussian { sigma: SIGMA }, seed).unwrap();
            let r = cdim_solve_kl(&g, &s, op.as_ref(), &y, &spec, &gauss_cfg, seed).unwrap();
            let (m, v) = empirical_moments(&residual_additive(&y, &op.apply(&r.x0).unwrap()).unwrap()).unwrap();
            (m, v / SIGMA2)
        })
        .collect();
    let gauss_ok = gauss.iter().filter(|(m, ratio)| m.abs() <= 0.02 && (0.5..=2.0).contains(ratio)).count();
    let max_mu = gauss.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    let (lo, hi) = gauss.iter().fold((f64::INFINITY, 0.0f64), |(a, b), p| (a.min(p.1), b.max(p.1)));

    let bi_cfg = SolverConfig {
        eta_scale: 0.03,
        ..base.clone()
    };
    let bi_spec = bimodal_spec(0.75, 0.5).unwrap();
    let bi: Vec<f64> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let noise = NoiseModel::Bimodal { amplitude: 0.75, prob: 0.5 };
            let y = observe(op.as_ref(), &truth(&g, seed), &noise, seed).unwrap();
            let r = cdim_solve_kl(&g, &s, op.as_ref(), &y, &bi_spec, &bi_cfg, seed).unwrap();
            evaluate_prediction(&bi_spec, &y, &op.apply(&r.x0).unwrap()).unwrap().value
        })
        .collect();
    let bi_ok = bi.iter().filter(|kl| **kl <= 0.05).count();
    let bi_max = bi.iter().cloned().fold(0.0, f64::max);

    let pg = positive_prior(16).unwrap();
    let pop = scale_operator(16, POISSON_GAIN).unwrap();
    let p_spec = ConstraintSpec::pearson(0.05).unwrap();
    let p_cfg = SolverConfig {
        eta_scale: 0.1,
        ..base
    };
    let pois: Vec<(f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let y = observe(pop.as_ref(), &truth(&pg, seed), &NoiseModel::Poisson { scale: 0.05 }, seed).unwrap();
            let r = cdim_solve_kl(&pg, &s, pop.as_ref(), &y, &p_spec, &p_cfg, seed).unwrap();
            let res = residual_pearson(&y, &pop.apply(&r.x0).unwrap(), 0.05, DEFAULT_PEARSON_FLOOR).unwrap();
            empirical_moments(&res).unwrap()
        })
        .collect();
    let p_ok = pois.iter().filter(|(m, v)| m.abs() <= 0.1 && (0.5..=2.0).contains(v)).count();
    let p_mu = pois.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    let (plo, phi) = pois.iter().fold((f64::INFINITY, 0.0f64), |(a, b), p| (a.min(p.1), b.max(p.1)));

    outcome(
        gauss_ok == 20 && bi_ok == 20 && p_ok == 20,
        format!(
            "gaussian {gauss_ok}/20 (max |mu| {max_mu:.4} <= 0.02, var/sigma2 in [{lo:.2}, {hi:.2}] within [0.5, 2]); \
             bimodal {bi_ok}/20 (max KL {bi_max:.4} <= 0.05); \
             poisson {p_ok}/20 (max |mu| {p_mu:.3} <= 0.1, var in [{plo:.2}, {phi:.2}] within [0.5, 2])"
        ),
    )
}

/// Every early stop exits with residual variance strictly below the threshold.
fn c6_early_stop() -> Outcome {
    let s = schedule();
    let g = default_prior(16).unwrap();
    let ops: Vec<Operator> = vec![
        identity(16),
        half_mask(16).unwrap(),
        blur_operator(16, gaussian_kernel(1.0).unwrap()).unwrap(),
    ];
    let mut runs = 0;
    let mut fired_runs = 0;
    let mut fired_steps = 0;
    let mut violations = 0;
    for op in &ops {
        for (mode, eta) in [(StepMode::InstantaneousGrad, 0.1), (StepMode::DpsResidual, 1.0)] {
            let cfg = SolverConfig {
                step_mode: mode,
                eta_scale: eta,
                ..Default::default()
            };
            for seed in 0..40u64 {
                let y = observe(op.as_ref(), &truth(&g, seed), &NoiseModel::Gaussian { sigma: SIGMA }, seed).unwrap();
                let r = cdim_solve_l2(&g, &s, op.as_ref(), &y, SIGMA2, &cfg, seed).unwrap();
                runs += 1;
                let mut fired = false;
                for rec in r.trajectory.iter().filter(|rec| rec.early_stopped) {
                    fired = true;
                    fired_steps += 1;
                    match rec.exit_variance {
                        Some(v) if v < SIGMA2 => {}
                        _ => violations += 1,
                    }
                }
                fired_runs += fired as usize;
            }
        }
    }
    outcome(
        violations == 0 && fired_runs > 0,
        format!("{fired_runs}/{runs} runs stopped early ({fired_steps} steps); {violations} exits with variance >= var_r"),
    )
}

/// Evaluation counts and the time-per-evaluation fit.
fn c7_accounting() -> Outcome {
    let s = schedule();
    let mlp = MlpDenoiser::init(16, [64, 64], 16, 7).unwrap();
    let g = default_prior(16).unwrap();
    let op = half_mask(16).unwrap();
    let mut mismatches = Vec::new();
    let mut points = Vec::new();
    let mut cells = Vec::new();
    for tp in [5usize, 10, 25, 50] {
        for k in [0usize, 1, 3, 7] {
            cells.push((tp, k));
        }
    }
    cells.extend([(5, 39), (10, 19), (25, 7), (50, 3)]);
    for &(tp, k) in &cells {
        let grid = make_time_grid(&s, 1000 / tp).unwrap();
        assert_eq!(grid.t_prime(), tp);
        let cfg = SolverConfig {
            delta: 1000 / tp,
            k,
            ..Default::default()
        };
        let mut wall = 0.0;
        for seed in 0..3u64 {
            let y = observe(op.as_ref(), &truth(&g, seed), &NoiseModel::Gaussian { sigma: SIGMA }, seed).unwrap();
            let r = cdim_solve_l2(&mlp, &s, op.as_ref(), &y, 0.0, &cfg, seed).unwrap();
            if r.early_stopped() || r.model_evals != tp * (k + 1) {
                mismatches.push(format!("T'={tp} K={k}: {}", r.model_evals));
            }
            wall += r.wall_time;
        }
        points.push(((tp * (k + 1)) as f64, wall));
    }
    let (slope, _, r2) = cdim::harness::linear_fit(&points);
    outcome(
        mismatches.is_empty() && r2 >= 0.95,
        format!(
            "{} grid cells, {} count mismatches; wall time vs evals R^2 = {r2:.4} >= 0.95 ({:.1} us/eval)",
            cells.len(),
            mismatches.len(),
            slope / 3.0 * 1e6
        ),
    )
}

/// With K = 0 both solvers are the unconditional sampler, bit for bit.
fn c8_reduction() -> Outcome {
    let s = schedule();
    let g = default_prior(16).unwrap();
    let pg = positive_prior(16).unwrap();
    let mut checked = 0;
    let mut differing = 0;
    let specs = [
        ConstraintSpec::kl_gaussian(SIGMA2).unwrap(),
        ConstraintSpec::kl_discrete(DiscreteTarget::gaussian(SIGMA, 16, 4.0 * SIGMA).unwrap()),
        bimodal_spec(0.75, 0.5).unwrap(),
    ];
    for delta in [20usize, 100, 300] {
        for seed in 0..10u64 {
            let base = unconditional_ddim(&g, &s, delta, seed).unwrap();
            let pbase = unconditional_ddim(&pg, &s, delta, seed).unwrap();
            let cfg = SolverConfig {
                delta,
                k: 0,
                ..Default::default()
            };
            for op in [identity(16), half_mask(16).unwrap()] {
                let y = observe(op.as_ref(), &truth(&g, seed), &NoiseModel::Gaussian { sigma: SIGMA }, seed).unwrap();
                let mut outs = vec![
                    cdim_solve_l2(&g, &s, op.as_ref(), &y, 0.0, &cfg, seed).unwrap().x0,
                    cdim_solve_l2(&g, &s, op.as_ref(), &y, SIGMA2, &cfg, seed).unwrap().x0,
                ];
                for spec in &specs {
                    outs.push(cdim_solve_kl(&g, &s, op.as_ref(), &y, spec, &cfg, seed).unwrap().x0);
                }
                for x in outs {
                    checked += 1;
                    differing += x.iter().zip(&base).any(|(a, b)| a.to_bits() != b.to_bits()) as usize;
                }
            }
            let pop = scale_operator(16, POISSON_GAIN).unwrap();
            let y = observe(pop.as_ref(), &truth(&pg, seed), &NoiseModel::Poisson { scale: 0.05 }, seed).unwrap();
            let x = cdim_solve_kl(&pg, &s, pop.as_ref(), &y, &ConstraintSpec::pearson(0.05).unwrap(), &cfg, seed)
                .unwrap()
                .x0;
            checked += 1;
            differing += x.iter().zip(&pbase).any(|(a, b)| a.to_bits() != b.to_bits()) as usize;
        }
    }
    outcome(differing == 0, format!("{checked} K=0 solves, {differing} differ bitwise from unconditional DDIM"))
}

/// Calibrated step sizes against residual-normalised ones on the half mask.
fn c9_step_sizes() -> Outcome {
    let s = schedule();
    let g = default_prior(16).unwrap();
    let op = half_mask(16).unwrap();
    let noise = NoiseModel::Gaussian { sigma: SIGMA };
    let base = SolverConfig {
        delta: 100,
        k: 10,
        ..Default::default()
    };
    assert_eq!(make_time_grid(&s, base.delta).unwrap().t_prime(), 10);
    let set = sample_gmm(&g, 10, 99).unwrap();
    let profile = calibrate(&g, &s, op.as_ref(), &ConstraintSpec::l2(), &noise, &base, &set, 5)
        .unwrap()
        .profile;
    let run = |cfg: &SolverConfig, seed: u64| {
        let y = observe(op.as_ref(), &truth(&g, seed), &noise, seed).unwrap();
        let r = cdim_solve_l2(&g, &s, op.as_ref(), &y, 0.0, cfg, seed).unwrap();
        final_l2(op.as_ref(), &y, &r.x0)
    };
    let mk = |mode: StepMode, eta: f64| SolverConfig {
        step_mode: mode,
        eta_scale: eta,
        profile: (mode == StepMode::CalibratedExpectation).then(|| profile.clone()),
        ..base.clone()
    };
    // Each mode gets its own eta_scale, tuned on seeds disjoint from the
    // comparison seeds by the geometric mean of the final objective.
    let grid = [0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0];
    let tune = |mode: StepMode| {
        grid.iter()
            .map(|&eta| {
                let cfg = mk(mode, eta);
                let score: f64 = (500..520u64).into_par_iter().map(|seed| run(&cfg, seed).ln()).sum();
                (eta, score)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0
    };
    let eta_dps = tune(StepMode::DpsResidual);
    let eta_cal = tune(StepMode::CalibratedExpectation);
    let (dps, cal) = (mk(StepMode::DpsResidual, eta_dps), mk(StepMode::CalibratedExpectation, eta_cal));
    let wins = (100..120u64)
        .into_par_iter()
        .filter(|&seed| run(&cal, seed) <= run(&dps, seed))
        .count();
    outcome(
        wins >= 15,
        format!("calibrated (eta {eta_cal}) <= dps_residual (eta {eta_dps}) on {wins}/20 seeds (need 15)"),
    )
}

/// Non-negativity of the exact Gaussian KL and the printed variant's values.
fn c10_kl() -> Outcome {
    let mut rng = stream_rng(10, streams::ORACLE);
    use rand::Rng;
    let mut negatives = 0;
    let mut spurious_zeros = 0;
    let mut min_val = f64::INFINITY;
    for _ in 0..10_000 {
        let m: f64 = rng.random_range(-2.0..2.0);
        let v: f64 = rng.random_range(1e-3..5.0);
        let s2: f64 = rng.random_range(1e-3..5.0);
        let kl = gaussian_kl(m, v, s2, false).unwrap();
        min_val = min_val.min(kl);
        if kl < -1e-12 {
            negatives += 1;
        }
        let matched = m.abs() / s2.sqrt() < 1e-5 && (v / s2 - 1.0).abs() < 1e-5;
        if kl <= 1e-12 && !matched {
            spurious_zeros += 1;
        }
    }
    let mut worst_matched = 0.0f64;
    for _ in 0..1000 {
        let s2: f64 = rng.random_range(1e-3..5.0);
        worst_matched = worst_matched.max(gaussian_kl(0.0, s2, s2, false).unwrap().abs());
    }

    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/paper_variant_kl.csv");
    let mut reader = csv::Reader::from_path(path).unwrap();
    let mut rows = 0;
    let mut mismatched = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        let f: Vec<f64> = rec.iter().map(|x| x.parse().unwrap()).collect();
        rows += 1;
        if gaussian_kl(f[0], f[1], f[2], true).unwrap().to_bits() != f[3].to_bits() {
            mismatched += 1;
        }
    }
    outcome(
        negatives == 0 && spurious_zeros == 0 && worst_matched <= 1e-12 && rows == 100 && mismatched == 0,
        format!(
            "10^4 inputs: {negatives} negative, {spurious_zeros} near-zero off the matched set (min {min_val:.2e}); \
             matched moments max |KL| {worst_matched:.1e} <= 1e-12; printed variant {}/{rows} bitwise equal to the reference script",
            rows - mismatched
        ),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (1, "noiseless exact recovery", c1_noiseless),
        (2, "posterior mean vs quadrature and importance sampling", c2_tweedie),
        (3, "gradient exactness", c3_gradients),
        (4, "posterior consistency by energy distance", c4_posterior),
        (5, "residual distribution matching", c5_residuals),
        (6, "early-stop contract", c6_early_stop),
        (7, "evaluation accounting", c7_accounting),
        (8, "K=0 reduction", c8_reduction),
        (9, "step-size ordering", c9_step_sizes),
        (10, "Gaussian KL correctness", c10_kl),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, name, f) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let t0 = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        println!(
            "criterion {id:2} {}: {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t0.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all{} criteria passed", if only.is_empty() { "" } else { " selected" });
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
