//! Score models, Tweedie estimates and the deterministic DDIM update.
//!
//! A [`ScoreModel`] predicts the noise `eps` that was mixed into `x_t`.
//! Everything the solvers need follows from that prediction through the
//! plug-in Tweedie estimate
//!
//! ```text
//! xhat0 = (x_t - sqrt(1 - abar_t) * eps(x_t, t)) / sqrt(abar_t)
//! ```
//!
//! together with the vector-Jacobian product of `xhat0` with respect to
//! `x_t`, which carries constraint gradients back onto the diffusion state.

mod gmm;
mod io;
mod mlp;

pub use gmm::GmmPrior;
pub use io::{load_model, read_model, save_model, write_model, AnyModel, ModelKind, MODEL_MAGIC};
pub use mlp::{train_mlp_denoiser, MlpDenoiser, TrainingConfig, TrainingReport};

use crate::error::{check_len, CdimError, Result};

/// A diffusion timestep paired with its cumulative signal retention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timestep {
    pub t: usize,
    pub alpha_bar: f64,
}

impl Timestep {
    pub fn clean() -> Self {
        Timestep {
            t: 0,
            alpha_bar: 1.0,
        }
    }
}

/// Contract shared by analytic and learned denoisers.
///
/// Implementations must keep `predict_xhat0` and `predict_eps` tied by the
/// plug-in Tweedie formula at every `(x_t, t)`. At `alpha_bar == 1` the
/// estimate is `x_t` itself.
pub trait ScoreModel: Send + Sync {
    fn dim(&self) -> usize;

    fn predict_eps(&self, x_t: &[f64], at: Timestep) -> Result<Vec<f64>>;

    fn predict_xhat0(&self, x_t: &[f64], at: Timestep) -> Result<Vec<f64>> {
        if at.alpha_bar >= 1.0 {
            return Ok(x_t.to_vec());
        }
        let eps = self.predict_eps(x_t, at)?;
        xhat_from_eps(x_t, &eps, at.alpha_bar)
    }

    /// `J^T cotangent` with `J = d xhat0 / d x_t`.
    fn xhat0_vjp(&self, x_t: &[f64], at: Timestep, cotangent: &[f64]) -> Result<Vec<f64>>;

    /// Evaluates `xhat0` once, asks `cotangent_fn` for the cotangent at that
    /// estimate, and returns `(xhat0, J^T cotangent)`.
    ///
    /// The default implementation runs the forward pass twice; models that
    /// can cache intermediate values override it.
    fn xhat0_pullback(
        &self,
        x_t: &[f64],
        at: Timestep,
        cotangent_fn: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let xhat0 = self.predict_xhat0(x_t, at)?;
        let cot = cotangent_fn(&xhat0)?;
        let grad = self.xhat0_vjp(x_t, at, &cot)?;
        Ok((xhat0, grad))
    }
}

impl<M: ScoreModel + ?Sized> ScoreModel for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn predict_eps(&self, x_t: &[f64], at: Timestep) -> Result<Vec<f64>> {
        (**self).predict_eps(x_t, at)
    }
    fn predict_xhat0(&self, x_t: &[f64], at: Timestep) -> Result<Vec<f64>> {
        (**self).predict_xhat0(x_t, at)
    }
    fn xhat0_vjp(&self, x_t: &[f64], at: Timestep, cotangent: &[f64]) -> Result<Vec<f64>> {
        (**self).xhat0_vjp(x_t, at, cotangent)
    }
    fn xhat0_pullback(
        &self,
        x_t: &[f64],
        at: Timestep,
        cotangent_fn: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        (**self).xhat0_pullback(x_t, at, cotangent_fn)
    }
}

/// Inverts the plug-in estimate: `eps = (x_t - sqrt(abar) xhat0) / sqrt(1 - abar)`.
pub fn eps_from_xhat(x_t: &[f64], xhat0: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
    check_len("xhat0", x_t.len(), xhat0.len())?;
    if !(alpha_bar > 0.0 && alpha_bar < 1.0) {
        return Err(CdimError::DegenerateTime(format!(
            "eps is undefined at alpha_bar = {alpha_bar}"
        )));
    }
    let sa = alpha_bar.sqrt();
    let s1 = (1.0 - alpha_bar).sqrt();
    Ok(x_t
        .iter()
        .zip(xhat0)
        .map(|(x, h)| (x - sa * h) / s1)
        .collect())
}

/// Plug-in Tweedie estimate from an eps prediction.
pub fn xhat_from_eps(x_t: &[f64], eps: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
    check_len("eps", x_t.len(), eps.len())?;
    if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
        return Err(CdimError::DegenerateTime(format!(
            "Tweedie estimate needs alpha_bar in (0, 1], got {alpha_bar}"
        )));
    }
    let sa = alpha_bar.sqrt();
    let s1 = (1.0 - alpha_bar).sqrt();
    Ok(x_t
        .iter()
        .zip(eps)
        .map(|(x, e)| (x - s1 * e) / sa)
        .collect())
}

/// Deterministic (accelerated) DDIM update from `alpha_t` to `alpha_next`:
///
/// `sqrt(a_next) xhat0 + sqrt(1 - a_next) (x_t - sqrt(a_t) xhat0) / sqrt(1 - a_t)`.
pub fn ddim_step(x_t: &[f64], xhat0: &[f64], alpha_t: f64, alpha_next: f64) -> Result<Vec<f64>> {
    check_len("xhat0", x_t.len(), xhat0.len())?;
    if !(alpha_t > 0.0 && alpha_t <= 1.0 && alpha_next > 0.0 && alpha_next <= 1.0) {
        return Err(CdimError::param(format!(
            "alpha values must lie in (0, 1], got ({alpha_t}, {alpha_next})"
        )));
    }
    if alpha_next < alpha_t {
        return Err(CdimError::param(format!(
            "ddim_step must move toward less noise ({alpha_t} -> {alpha_next})"
        )));
    }
    if alpha_next == alpha_t {
        return Ok(x_t.to_vec());
    }
    if alpha_next == 1.0 {
        return Ok(xhat0.to_vec());
    }
    if alpha_t == 1.0 {
        return Err(CdimError::DegenerateTime(
            "a noiseless state cannot be re-noised".into(),
        ));
    }
    let sa_next = alpha_next.sqrt();
    let ratio = ((1.0 - alpha_next) / (1.0 - alpha_t)).sqrt();
    let sa_t = alpha_t.sqrt();
    Ok(x_t
        .iter()
        .zip(xhat0)
        .map(|(x, h)| sa_next * h + ratio * (x - sa_t * h))
        .collect())
}
