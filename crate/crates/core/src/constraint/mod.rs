//! Residuals, divergence objectives and their gradients.
//!
//! Every objective is a function of the predicted measurements `A xhat0`;
//! gradients are formed in measurement space and pulled back through `A^T`.

mod kl;
mod residual;

pub use kl::{discrete_kl, gaussian_kl, soft_histogram, DiscreteKl, DiscreteTarget};
pub use residual::{empirical_moments, residual_additive, residual_pearson};

use crate::error::{check_len, CdimError, Result};
use crate::measurement::LinearOperator;

pub const DEFAULT_PEARSON_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// `(1/d) ||y - A xhat0||^2`.
    L2,
    /// Categorical KL between a bucketed target and the soft histogram of residuals.
    KlDiscrete(DiscreteTarget),
    /// Analytic KL between the residuals' moment-matched Gaussian and `N(0, sigma2)`.
    KlGaussian { sigma2: f64 },
    /// Gaussian KL of Pearson residuals against the unit normal.
    PearsonGaussian { scale: f64, floor: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    pub objective: Objective,
    /// Use the printed (un-halved log term) Gaussian KL instead of the exact one.
    pub paper_variant_kl: bool,
}

impl ConstraintSpec {
    pub fn l2() -> Self {
        ConstraintSpec {
            objective: Objective::L2,
            paper_variant_kl: false,
        }
    }

    pub fn kl_gaussian(sigma2: f64) -> Result<Self> {
        let spec = ConstraintSpec {
            objective: Objective::KlGaussian { sigma2 },
            paper_variant_kl: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn kl_discrete(target: DiscreteTarget) -> Self {
        ConstraintSpec {
            objective: Objective::KlDiscrete(target),
            paper_variant_kl: false,
        }
    }

    pub fn pearson(scale: f64) -> Result<Self> {
        let spec = ConstraintSpec {
            objective: Objective::PearsonGaussian {
                scale,
                floor: DEFAULT_PEARSON_FLOOR,
            },
            paper_variant_kl: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.objective {
            Objective::L2 => Ok(()),
            Objective::KlDiscrete(t) => t.validate(),
            Objective::KlGaussian { sigma2 } if *sigma2 > 0.0 && sigma2.is_finite() => Ok(()),
            Objective::PearsonGaussian { scale, floor } if *scale > 0.0 && *floor > 0.0 => Ok(()),
            other => Err(CdimError::param(format!("invalid objective {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.objective {
            Objective::L2 => "l2",
            Objective::KlDiscrete(_) => "kl_discrete",
            Objective::KlGaussian { .. } => "kl_gaussian",
            Objective::PearsonGaussian { .. } => "pearson_gaussian",
        }
    }

    pub fn is_kl(&self) -> bool {
        !matches!(self.objective, Objective::L2)
    }
}

/// Objective value, its gradient with respect to the prediction `A xhat0`,
/// and the residual diagnostics the solvers record.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionEval {
    pub value: f64,
    pub grad_prediction: Vec<f64>,
    pub residual_mean: f64,
    pub residual_var: f64,
    /// Residuals that fell outside the outermost bucket edges.
    pub clipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub grad_xhat0: Vec<f64>,
    pub residual_mean: f64,
    pub residual_var: f64,
    pub clipped: usize,
}

fn moments_lenient(r: &[f64]) -> (f64, f64) {
    let d = r.len() as f64;
    let mean = r.iter().sum::<f64>() / d;
    let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    (mean, var)
}

/// Gradient of a moment-matched Gaussian KL with respect to the residuals.
fn gaussian_kl_residual_grad(r: &[f64], sigma2: f64, paper_variant: bool) -> Result<(f64, Vec<f64>, f64, f64)> {
    let (mean, var) = empirical_moments(r)?;
    let value = gaussian_kl(mean, var, sigma2, paper_variant)?;
    let d = r.len() as f64;
    let d_mean = mean / sigma2;
    let log_coef = if paper_variant { 1.0 } else { 0.5 };
    let d_var = -log_coef / var + 0.5 / sigma2;
    let grad = r
        .iter()
        .map(|ri| (d_mean + 2.0 * d_var * (ri - mean)) / d)
        .collect();
    Ok((value, grad, mean, var))
}

/// Evaluates the objective as a function of the prediction `a = A xhat0`.
pub fn evaluate_prediction(spec: &ConstraintSpec, y: &[f64], a: &[f64]) -> Result<PredictionEval> {
    check_len("prediction", y.len(), a.len())?;
    let d = y.len() as f64;
    match &spec.objective {
        Objective::L2 => {
            let r = residual_additive(y, a)?;
            let (mean, var) = moments_lenient(&r);
            Ok(PredictionEval {
                value: r.iter().map(|v| v * v).sum::<f64>() / d,
                grad_prediction: r.iter().map(|v| -2.0 * v / d).collect(),
                residual_mean: mean,
                residual_var: var,
                clipped: 0,
            })
        }
        Objective::KlGaussian { sigma2 } => {
            let r = residual_additive(y, a)?;
            let (value, g, mean, var) = gaussian_kl_residual_grad(&r, *sigma2, spec.paper_variant_kl)?;
            Ok(PredictionEval {
                value,
                grad_prediction: g.into_iter().map(|v| -v).collect(),
                residual_mean: mean,
                residual_var: var,
                clipped: 0,
            })
        }
        Objective::PearsonGaussian { scale, floor } => {
            let r = residual_pearson(y, a, *scale, *floor)?;
            let (value, g, mean, var) = gaussian_kl_residual_grad(&r, 1.0, spec.paper_variant_kl)?;
            let grad = g
                .iter()
                .zip(a)
                .zip(&r)
                .map(|((gi, &ai), &ri)| {
                    let dr_da = if ai > *floor {
                        -scale / (scale * ai).sqrt() - ri / (2.0 * ai)
                    } else {
                        -scale / (scale * floor).sqrt()
                    };
                    gi * dr_da
                })
                .collect();
            Ok(PredictionEval {
                value,
                grad_prediction: grad,
                residual_mean: mean,
                residual_var: var,
                clipped: 0,
            })
        }
        Objective::KlDiscrete(target) => {
            let r = residual_additive(y, a)?;
            let (mean, var) = moments_lenient(&r);
            let kl = discrete_kl(&r, target)?;
            Ok(PredictionEval {
                value: kl.value,
                grad_prediction: kl.grad.into_iter().map(|v| -v).collect(),
                residual_mean: mean,
                residual_var: var,
                clipped: kl.clipped,
            })
        }
    }
}

/// Objective value and its gradient with respect to `xhat0`
/// (`A^T` applied to the measurement-space derivative).
pub fn objective_value_and_grad(
    spec: &ConstraintSpec,
    y: &[f64],
    a_xhat: &[f64],
    op: &dyn LinearOperator,
) -> Result<ObjectiveEval> {
    check_len("observation", op.output_dim(), y.len())?;
    let e = evaluate_prediction(spec, y, a_xhat)?;
    Ok(ObjectiveEval {
        value: e.value,
        grad_xhat0: op.adjoint(&e.grad_prediction)?,
        residual_mean: e.residual_mean,
        residual_var: e.residual_var,
        clipped: e.clipped,
    })
}
