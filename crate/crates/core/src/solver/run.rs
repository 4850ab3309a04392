use std::time::Instant;

use super::project::project_noiseless_final;
use super::{step_size, SolveResult, SolverConfig, StepContext, StepMode, StepRecord};
use crate::calibration::Fingerprint;
use crate::constraint::{evaluate_prediction, ConstraintSpec, Objective, PredictionEval};
use crate::error::{check_len, CdimError, Result};
use crate::measurement::{dot, LinearOperator};
use crate::rng::{standard_normal_vec, stream_rng, streams};
use crate::schedule::{make_time_grid, NoiseSchedule, TimeGrid};
use crate::score::{ddim_step, ScoreModel};

/// `x_T ~ N(0, I)` for a run seed.
pub fn initial_state(n: usize, seed: u64) -> Vec<f64> {
    standard_normal_vec(&mut stream_rng(seed, streams::SOLVER_INIT), n)
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Numeric failures mid-solve are reported as divergence at that step.
fn diverged(e: CdimError, t: usize, inner: usize, eta: f64) -> CdimError {
    match e {
        CdimError::Numeric(detail) => CdimError::Divergence { t, inner, eta, detail },
        other => other,
    }
}

fn outer_step(model: &dyn ScoreModel, schedule: &NoiseSchedule, grid: &TimeGrid, x: &[f64], t: usize) -> Result<Vec<f64>> {
    let at = schedule.at(t);
    let next = schedule.at(grid.next(t));
    let xhat0 = model.predict_xhat0(x, at).map_err(|e| diverged(e, t, 0, 0.0))?;
    let out = ddim_step(x, &xhat0, at.alpha_bar, next.alpha_bar)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(CdimError::Divergence {
            t,
            inner: 0,
            eta: 0.0,
            detail: "non-finite state after the DDIM step".into(),
        });
    }
    Ok(out)
}

/// Deterministic accelerated DDIM sampling with stride `delta`.
pub fn unconditional_ddim(model: &dyn ScoreModel, schedule: &NoiseSchedule, delta: usize, seed: u64) -> Result<Vec<f64>> {
    let grid = make_time_grid(schedule, delta)?;
    let mut x = initial_state(model.dim(), seed);
    for &t in grid.steps() {
        x = outer_step(model, schedule, &grid, &x, t)?;
    }
    Ok(x)
}

/// Algorithm with KL-type constraints: Gaussian moment KL, bucketed KL or
/// Pearson residual KL.
#[allow(clippy::too_many_arguments)]
pub fn cdim_solve_kl(
    model: &dyn ScoreModel,
    schedule: &NoiseSchedule,
    op: &dyn LinearOperator,
    y: &[f64],
    spec: &ConstraintSpec,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<SolveResult> {
    if !spec.is_kl() {
        return Err(CdimError::param("cdim_solve_kl needs a KL objective; use cdim_solve_l2 for l2"));
    }
    solve_inner(model, schedule, op, y, spec, cfg, None, seed)
}

/// L2 projection with early stopping once the residual variance drops
/// below `var_r`. `var_r = 0` never stops early.
#[allow(clippy::too_many_arguments)]
pub fn cdim_solve_l2(
    model: &dyn ScoreModel,
    schedule: &NoiseSchedule,
    op: &dyn LinearOperator,
    y: &[f64],
    var_r: f64,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<SolveResult> {
    if !(var_r >= 0.0) {
        return Err(CdimError::param(format!("var_r must be >= 0, got {var_r}")));
    }
    let stop = (var_r > 0.0).then_some(var_r);
    solve_inner(model, schedule, op, y, &ConstraintSpec::l2(), cfg, stop, seed)
}

/// Dispatches on the objective: L2 uses `cfg.early_stop_variance`.
pub fn cdim_solve(
    model: &dyn ScoreModel,
    schedule: &NoiseSchedule,
    op: &dyn LinearOperator,
    y: &[f64],
    spec: &ConstraintSpec,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<SolveResult> {
    if matches!(spec.objective, Objective::L2) {
        cdim_solve_l2(model, schedule, op, y, cfg.early_stop_variance, cfg, seed)
    } else {
        cdim_solve_kl(model, schedule, op, y, spec, cfg, seed)
    }
}

#[allow(clippy::too_many_arguments)]
fn solve_inner(
    model: &dyn ScoreModel,
    schedule: &NoiseSchedule,
    op: &dyn LinearOperator,
    y: &[f64],
    spec: &ConstraintSpec,
    cfg: &SolverConfig,
    early_stop: Option<f64>,
    seed: u64,
) -> Result<SolveResult> {
    cfg.validate()?;
    spec.validate()?;
    let n = model.dim();
    check_len("operator input", n, op.input_dim())?;
    check_len("observation", op.output_dim(), y.len())?;
    let grid = make_time_grid(schedule, cfg.delta)?;
    if cfg.step_mode == StepMode::CalibratedExpectation {
        let profile = cfg.profile.as_ref().expect("validated");
        profile.check(&Fingerprint::new(op, spec, &grid, cfg.k))?;
    }
    let eta_max = cfg.eta_cap();

    let start = Instant::now();
    let mut x = initial_state(n, seed);
    let mut trajectory = Vec::with_capacity(grid.t_prime());
    let mut model_evals = 0;
    for (step, &t) in grid.steps().iter().enumerate() {
        x = outer_step(model, schedule, &grid, &x, t)?;
        model_evals += 1;
        let t_next = grid.next(t);
        let at = schedule.at(t_next);
        let mut rec = StepRecord {
            t,
            t_next,
            objectives: Vec::with_capacity(cfg.k),
            residual_means: Vec::with_capacity(cfg.k),
            residual_vars: Vec::with_capacity(cfg.k),
            grad_norms: Vec::with_capacity(cfg.k),
            etas: Vec::with_capacity(cfg.k),
            inner_steps: 0,
            early_stopped: false,
            exit_variance: None,
            eta_clamped: false,
            objective_after: None,
            model_evals: 1,
        };
        let mut last_eta = 0.0;
        for inner in 0..cfg.k {
            let mut eval: Option<PredictionEval> = None;
            let (xhat0, grad) = model.xhat0_pullback(&x, at, &mut |xhat0| {
                let a = op.apply(xhat0)?;
                let e = evaluate_prediction(spec, y, &a)?;
                let g = op.adjoint(&e.grad_prediction)?;
                eval = Some(e);
                Ok(g)
            })
            .map_err(|e| diverged(e, t, inner, last_eta))?;
            model_evals += 1;
            rec.model_evals += 1;
            let e = eval.expect("cotangent closure ran");
            rec.objectives.push(e.value);
            rec.residual_means.push(e.residual_mean);
            rec.residual_vars.push(e.residual_var);
            if let Some(var_r) = early_stop {
                if e.residual_var < var_r {
                    rec.early_stopped = true;
                    rec.exit_variance = Some(e.residual_var);
                    break;
                }
            }
            let grad_norm = norm(&grad);
            rec.grad_norms.push(grad_norm);
            if !grad_norm.is_finite() {
                return Err(CdimError::Divergence {
                    t,
                    inner,
                    eta: 0.0,
                    detail: "non-finite objective gradient".into(),
                });
            }
            let residual: Vec<f64> = {
                let a = op.apply(&xhat0)?;
                y.iter().zip(&a).map(|(yi, ai)| yi - ai).collect()
            };
            let ctx = StepContext {
                residual_norm: norm(&residual),
                grad_norm,
                profile_value: cfg.profile.as_ref().map(|p| p.mean_grad_norm()[step]),
                eta_scale: cfg.eta_scale,
                eta_max,
            };
            let (eta, clamped) = step_size(cfg.step_mode, &ctx)?;
            rec.eta_clamped |= clamped;
            rec.etas.push(eta);
            last_eta = eta;
            for (xi, gi) in x.iter_mut().zip(&grad) {
                *xi -= eta * gi;
            }
            rec.inner_steps += 1;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(CdimError::Divergence {
                    t,
                    inner,
                    eta,
                    detail: "non-finite state after a projection update".into(),
                });
            }
        }
        if t_next == 0 && rec.inner_steps > 0 {
            let a = op.apply(&x)?;
            rec.objective_after = Some(evaluate_prediction(spec, y, &a)?.value);
        }
        trajectory.push(rec);
    }
    // the state at t = 0 is its own Tweedie estimate
    let final_projection = if cfg.noiseless {
        let (x_proj, report) = project_noiseless_final(model, op, y, &x, schedule.at(0), cfg.noiseless_tol, cfg.k_max_final)?;
        x = x_proj;
        Some(report)
    } else {
        None
    };
    Ok(SolveResult {
        x0: x,
        trajectory,
        model_evals,
        wall_time: start.elapsed().as_secs_f64(),
        final_projection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{half_mask, identity};
    use crate::schedule::make_linear_schedule;
    use crate::score::GmmPrior;

    fn prior() -> GmmPrior {
        GmmPrior::new(
            vec![0.6, 0.4],
            vec![vec![1.0, -1.0, 0.5, 0.0], vec![-1.0, 0.5, 0.0, 1.0]],
            vec![vec![0.1, 0.2, 0.1, 0.05], vec![0.2, 0.1, 0.05, 0.1]],
        )
        .unwrap()
    }

    #[test]
    fn zero_inner_steps_reduce_to_ddim() {
        let s = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
        let g = prior();
        let op = half_mask(4).unwrap();
        let y = [0.1, 0.2];
        let cfg = SolverConfig { k: 0, delta: 50, ..SolverConfig::default() };
        let base = unconditional_ddim(&g, &s, 50, 3).unwrap();
        let l2 = cdim_solve_l2(&g, &s, op.as_ref(), &y, 0.0, &cfg, 3).unwrap();
        let kl = cdim_solve_kl(&g, &s, op.as_ref(), &y, &ConstraintSpec::kl_gaussian(0.01).unwrap(), &cfg, 3).unwrap();
        assert_eq!(l2.x0, base);
        assert_eq!(kl.x0, base);
        assert_eq!(l2.model_evals, 20);
    }

    #[test]
    fn eval_count_and_determinism() {
        let s = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
        let g = prior();
        let op = identity(4);
        let y = [1.0, -1.0, 0.5, 0.0];
        let cfg = SolverConfig { k: 2, delta: 100, ..SolverConfig::default() };
        let a = cdim_solve_l2(&g, &s, op.as_ref(), &y, 0.0, &cfg, 9).unwrap();
        let b = cdim_solve_l2(&g, &s, op.as_ref(), &y, 0.0, &cfg, 9).unwrap();
        assert_eq!(a.model_evals, 10 * 3);
        assert_eq!(a.x0, b.x0);
        assert_eq!(a.trajectory, b.trajectory);
        assert!(a.trajectory.last().unwrap().objective_after.is_some());
    }

    #[test]
    fn huge_variance_threshold_stops_immediately() {
        let s = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
        let g = prior();
        let op = identity(4);
        let y = [1.0, -1.0, 0.5, 0.0];
        let cfg = SolverConfig { k: 3, delta: 100, ..SolverConfig::default() };
        let r = cdim_solve_l2(&g, &s, op.as_ref(), &y, 1e12, &cfg, 2).unwrap();
        assert!(r.trajectory.iter().all(|s| s.inner_steps == 0 && s.early_stopped));
        assert_eq!(r.x0, unconditional_ddim(&g, &s, 100, 2).unwrap());
    }

    #[test]
    fn rejects_l2_in_kl_solver() {
        let s = make_linear_schedule(100, 1e-4, 0.2).unwrap();
        let op = identity(4);
        let r = cdim_solve_kl(&prior(), &s, op.as_ref(), &[0.0; 4], &ConstraintSpec::l2(), &SolverConfig::default(), 0);
        assert!(r.is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let s = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
        let op = identity(4);
        let cfg = SolverConfig {
            k: 5,
            delta: 100,
            step_mode: StepMode::DpsResidual,
            eta_scale: 1e300,
            eta_max: Some(f64::MAX),
            ..SolverConfig::default()
        };
        let err = cdim_solve_l2(&prior(), &s, op.as_ref(), &[1e10; 4], 0.0, &cfg, 0).unwrap_err();
        assert!(matches!(err, CdimError::Divergence { .. }), "{err}");
    }
}
