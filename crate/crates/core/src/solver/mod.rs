//! CDIM inference loops.
//!
//! Each outer step takes one unconditional DDIM step from `t` to `t - delta`
//! and then `K` projection updates `x <- x - eta * grad`, where the gradient
//! of the constraint objective is pulled back through the Tweedie estimate
//! at the new time. The cost is `T' (K + 1)` model evaluations.

mod project;
mod run;

pub use project::{project_noiseless_final, FinalProjection};
pub use run::{cdim_solve, cdim_solve_kl, cdim_solve_l2, initial_state, unconditional_ddim};

use serde::{Deserialize, Serialize};

use crate::calibration::StepSizeProfile;
use crate::error::{CdimError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// `eta = eta_scale / ||y - A xhat0||`.
    #[serde(alias = "dps")]
    DpsResidual,
    /// `eta = eta_scale / ||grad||`.
    #[serde(alias = "instantaneous")]
    InstantaneousGrad,
    /// `eta = eta_scale / profile[step]`.
    #[serde(alias = "calibrated")]
    CalibratedExpectation,
}

impl StepMode {
    pub fn name(self) -> &'static str {
        match self {
            StepMode::DpsResidual => "dps_residual",
            StepMode::InstantaneousGrad => "instantaneous_grad",
            StepMode::CalibratedExpectation => "calibrated_expectation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub delta: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub step_mode: StepMode,
    pub eta_scale: f64,
    /// Upper clamp on `eta`; `None` means `1e3 * eta_scale`.
    pub eta_max: Option<f64>,
    pub noiseless: bool,
    pub noiseless_tol: f64,
    #[serde(rename = "K_max_final")]
    pub k_max_final: usize,
    /// Early-stopping threshold on the residual variance (L2 loop only).
    #[serde(rename = "var_r")]
    pub early_stop_variance: f64,
    /// Required by [`StepMode::CalibratedExpectation`].
    #[serde(skip)]
    pub profile: Option<StepSizeProfile>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            delta: 20,
            k: 3,
            step_mode: StepMode::InstantaneousGrad,
            eta_scale: 0.1,
            eta_max: None,
            noiseless: false,
            noiseless_tol: 1e-5,
            k_max_final: 500,
            early_stop_variance: 0.0,
            profile: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta == 0 {
            return Err(CdimError::param("solver.delta must be >= 1"));
        }
        if !(self.eta_scale > 0.0 && self.eta_scale.is_finite()) {
            return Err(CdimError::param(format!("eta_scale must be positive, got {}", self.eta_scale)));
        }
        if let Some(m) = self.eta_max {
            if !(m > 0.0) {
                return Err(CdimError::param(format!("eta_max must be positive, got {m}")));
            }
        }
        if !(self.noiseless_tol > 0.0) {
            return Err(CdimError::param(format!("noiseless_tol must be positive, got {}", self.noiseless_tol)));
        }
        if !(self.early_stop_variance >= 0.0) {
            return Err(CdimError::param(format!("var_r must be >= 0, got {}", self.early_stop_variance)));
        }
        if self.step_mode == StepMode::CalibratedExpectation && self.profile.is_none() {
            return Err(CdimError::param("calibrated step mode needs a step-size profile"));
        }
        Ok(())
    }

    pub fn eta_cap(&self) -> f64 {
        self.eta_max.unwrap_or(1e3 * self.eta_scale)
    }
}

/// Inputs to [`step_size`]; only the one the mode divides by is read.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepContext {
    pub residual_norm: f64,
    pub grad_norm: f64,
    /// Expected gradient norm at this outer step.
    pub profile_value: Option<f64>,
    pub eta_scale: f64,
    pub eta_max: f64,
}

/// Returns `(eta, clamped)`; zero or non-finite denominators give `eta_max`.
pub fn step_size(mode: StepMode, ctx: &StepContext) -> Result<(f64, bool)> {
    let denom = match mode {
        StepMode::DpsResidual => ctx.residual_norm,
        StepMode::InstantaneousGrad => ctx.grad_norm,
        StepMode::CalibratedExpectation => ctx
            .profile_value
            .ok_or_else(|| CdimError::param("calibrated step size without a profile"))?,
    };
    let eta = ctx.eta_scale / denom;
    if eta.is_finite() && eta >= 0.0 && eta <= ctx.eta_max {
        Ok((eta, false))
    } else if eta.is_nan() || eta < 0.0 {
        Ok((0.0, true))
    } else {
        Ok((ctx.eta_max, true))
    }
}

/// Diagnostics of one outer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub t_next: usize,
    /// Objective at each inner evaluation, before the update that follows it.
    pub objectives: Vec<f64>,
    pub residual_means: Vec<f64>,
    pub residual_vars: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub etas: Vec<f64>,
    pub inner_steps: usize,
    pub early_stopped: bool,
    /// Residual variance that triggered the early stop.
    pub exit_variance: Option<f64>,
    pub eta_clamped: bool,
    /// Objective after the last update; only known without extra model
    /// calls when the step lands on `t = 0`.
    pub objective_after: Option<f64>,
    pub model_evals: usize,
}

impl StepRecord {
    pub fn objective_before(&self) -> Option<f64> {
        self.objectives.first().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub x0: Vec<f64>,
    pub trajectory: Vec<StepRecord>,
    /// Evaluations of the score model during the DDIM and projection steps.
    pub model_evals: usize,
    pub wall_time: f64,
    pub final_projection: Option<FinalProjection>,
}

impl SolveResult {
    pub fn early_stopped(&self) -> bool {
        self.trajectory.iter().any(|s| s.early_stopped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> StepContext {
        StepContext {
            residual_norm: 4.0,
            grad_norm: 0.5,
            profile_value: Some(2.0),
            eta_scale: 0.5,
            eta_max: 100.0,
        }
    }

    #[test]
    fn step_size_formulas() {
        let c = StepContext { grad_norm: 0.5, ..ctx() };
        assert_eq!(step_size(StepMode::InstantaneousGrad, &c).unwrap(), (1.0, false));
        let c = StepContext { eta_scale: 1.0, ..ctx() };
        assert_eq!(step_size(StepMode::CalibratedExpectation, &c).unwrap(), (0.5, false));
        assert_eq!(step_size(StepMode::DpsResidual, &ctx()).unwrap(), (0.125, false));
    }

    #[test]
    fn step_size_clamps() {
        let c = StepContext { grad_norm: 0.0, ..ctx() };
        assert_eq!(step_size(StepMode::InstantaneousGrad, &c).unwrap(), (100.0, true));
        let c = StepContext { residual_norm: 1e-9, ..ctx() };
        assert_eq!(step_size(StepMode::DpsResidual, &c).unwrap(), (100.0, true));
        let c = StepContext { profile_value: None, ..ctx() };
        assert!(step_size(StepMode::CalibratedExpectation, &c).is_err());
    }

    #[test]
    fn config_parses_from_json() {
        let cfg: SolverConfig = serde_json::from_str(
            r#"{"delta": 40, "K": 1, "step_mode": "calibrated_expectation", "var_r": 0.0025, "K_max_final": 50}"#,
        )
        .unwrap();
        assert_eq!((cfg.delta, cfg.k, cfg.k_max_final), (40, 1, 50));
        assert_eq!(cfg.step_mode, StepMode::CalibratedExpectation);
        assert!(cfg.validate().is_err());
        assert_eq!(SolverConfig::default().eta_cap(), 100.0);
        assert!(serde_json::from_str::<SolverConfig>(r#"{"k": 1}"#).is_err());
    }
}
