use serde::{Deserialize, Serialize};

use crate::error::{check_len, CdimError, Result};
use crate::measurement::{dot, LinearOperator};
use crate::score::{ScoreModel, Timestep};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalProjection {
    pub iterations: usize,
    /// Model evaluations spent here; not part of `SolveResult::model_evals`.
    pub evals: usize,
    /// Achieved `||y - A xhat0||_inf`.
    pub residual_inf: f64,
    pub converged: bool,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Drives `||y - A xhat0(x)||^2` to zero from `x` until the largest residual
/// is at most `tol` or `k_max` iterations have run.
///
/// Search directions are conjugate gradients of the least-squares problem
/// with an exact line search along each; at `t = 0` (where `xhat0 = x`) this
/// is CGLS and terminates in at most `rank(A)` steps up to rounding.
/// Returns the best iterate's `xhat0` and a report.
pub fn project_noiseless_final(
    model: &dyn ScoreModel,
    op: &dyn LinearOperator,
    y: &[f64],
    x: &[f64],
    at: Timestep,
    tol: f64,
    k_max: usize,
) -> Result<(Vec<f64>, FinalProjection)> {
    if !(tol > 0.0) {
        return Err(CdimError::param(format!("tolerance must be positive, got {tol}")));
    }
    check_len("observation", op.output_dim(), y.len())?;
    let n = x.len();
    let mut x = x.to_vec();
    let mut evals = 0;
    let mut residual = Vec::new();
    // gradient descent direction J^T A^T r
    let eval = |x: &[f64], evals: &mut usize, residual: &mut Vec<f64>| -> Result<(Vec<f64>, Vec<f64>)> {
        *evals += 1;
        model.xhat0_pullback(x, at, &mut |xhat0| {
            let a = op.apply(xhat0)?;
            *residual = y.iter().zip(&a).map(|(yi, ai)| yi - ai).collect();
            op.adjoint(residual)
        })
    };
    let (mut xhat0, mut s) = eval(&x, &mut evals, &mut residual)?;
    let mut best = (inf_norm(&residual), xhat0.clone());
    let mut p = s.clone();
    let mut gamma = dot(&s, &s);
    let mut iterations = 0;
    while best.0 > tol && iterations < k_max && gamma > 0.0 {
        iterations += 1;
        // A J p by a secant along p; exact when xhat0 is affine in x
        let pn = dot(&p, &p).sqrt();
        let h = (1.0 + dot(&x, &x).sqrt()) / pn;
        let probe: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| xi + h * pi).collect();
        evals += 1;
        let moved = model.predict_xhat0(&probe, at)?;
        let dir: Vec<f64> = moved.iter().zip(&xhat0).map(|(a, b)| (a - b) / h).collect();
        let q = op.apply(&dir)?;
        let qq = dot(&q, &q);
        if !(qq > 0.0) {
            break;
        }
        let alpha = dot(&residual, &q) / qq;
        for (xi, pi) in x.iter_mut().zip(&p) {
            *xi += alpha * pi;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CdimError::Divergence {
                t: at.t,
                inner: iterations,
                eta: alpha,
                detail: "non-finite state in the final projection".into(),
            });
        }
        let (h0, s_new) = eval(&x, &mut evals, &mut residual)?;
        xhat0 = h0;
        let r_inf = inf_norm(&residual);
        if r_inf < best.0 {
            best = (r_inf, xhat0.clone());
        }
        let gamma_new = dot(&s_new, &s_new);
        let beta = if iterations % n == 0 { 0.0 } else { gamma_new / gamma };
        for (pi, si) in p.iter_mut().zip(&s_new) {
            *pi = si + beta * *pi;
        }
        s = s_new;
        gamma = gamma_new;
    }
    let _ = s;
    let (residual_inf, xhat0) = best;
    Ok((
        xhat0,
        FinalProjection {
            iterations,
            evals,
            residual_inf,
            converged: residual_inf <= tol,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{blur_operator, gaussian_kernel, half_mask, identity};
    use crate::score::GmmPrior;

    fn prior(n: usize) -> GmmPrior {
        GmmPrior::isotropic(vec![0.0; n], 1.0).unwrap()
    }

    #[test]
    fn already_feasible_takes_no_steps() {
        let x = [0.3, -0.2, 1.0];
        let op = identity(3);
        let (out, rep) = project_noiseless_final(&prior(3), op.as_ref(), &x, &x, Timestep::clean(), 1e-5, 10).unwrap();
        assert_eq!(rep.iterations, 0);
        assert_eq!(out, x.to_vec());
    }

    #[test]
    fn identity_and_mask_and_blur() {
        let x = [0.5, -1.0, 2.0, 0.1, 0.0, 0.7, -0.3, 1.1];
        let y_full = [1.0, 0.0, -0.5, 0.25, 2.0, -1.0, 0.3, 0.9];
        let op = identity(8);
        let (out, rep) = project_noiseless_final(&prior(8), op.as_ref(), &y_full, &x, Timestep::clean(), 1e-5, 500).unwrap();
        assert!(rep.converged && rep.residual_inf <= 1e-5);
        assert!(out.iter().zip(&y_full).all(|(a, b)| (a - b).abs() <= 1e-5));

        let op = half_mask(8).unwrap();
        let y = &y_full[4..];
        let (out, rep) = project_noiseless_final(&prior(8), op.as_ref(), y, &x, Timestep::clean(), 1e-5, 500).unwrap();
        assert!(rep.converged);
        assert_eq!(out[..4], x[..4]);

        let op = blur_operator(8, gaussian_kernel(1.0).unwrap()).unwrap();
        let (_, rep) = project_noiseless_final(&prior(8), op.as_ref(), &y_full, &x, Timestep::clean(), 1e-5, 500).unwrap();
        assert!(rep.converged, "{rep:?}");
    }
}
