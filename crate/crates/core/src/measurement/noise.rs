use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::LinearOperator;
use crate::error::{check_finite, CdimError, Result};
use crate::rng::{stream_rng, streams};

/// Observation noise applied on top of `A x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    None,
    Gaussian { sigma: f64 },
    /// `+amplitude` with probability `prob`, otherwise `-amplitude`.
    Bimodal { amplitude: f64, prob: f64 },
    /// `s y ~ Poisson(s A x)`, reported on the `y` scale.
    Poisson { scale: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::None => Ok(()),
            NoiseModel::Gaussian { sigma } if sigma >= 0.0 && sigma.is_finite() => Ok(()),
            NoiseModel::Bimodal { amplitude, prob }
                if amplitude.is_finite() && (0.0..=1.0).contains(&prob) =>
            {
                Ok(())
            }
            NoiseModel::Poisson { scale } if scale > 0.0 && scale.is_finite() => Ok(()),
            other => Err(CdimError::param(format!("invalid noise model {other:?}"))),
        }
    }

    /// Per-coordinate noise variance for additive models.
    pub fn variance(&self) -> Option<f64> {
        match *self {
            NoiseModel::None => Some(0.0),
            NoiseModel::Gaussian { sigma } => Some(sigma * sigma),
            NoiseModel::Bimodal { amplitude, prob } => {
                let mean = amplitude * (2.0 * prob - 1.0);
                Some(amplitude * amplitude - mean * mean)
            }
            NoiseModel::Poisson { .. } => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NoiseModel::None => "none",
            NoiseModel::Gaussian { .. } => "gaussian",
            NoiseModel::Bimodal { .. } => "bimodal",
            NoiseModel::Poisson { .. } => "poisson",
        }
    }
}

/// Draws `y` for ground truth `x_true`. Deterministic in `seed`.
pub fn observe(op: &dyn LinearOperator, x_true: &[f64], noise: &NoiseModel, seed: u64) -> Result<Vec<f64>> {
    check_finite("x_true", x_true)?;
    noise.validate()?;
    let clean = op.apply(x_true)?;
    let mut rng = stream_rng(seed, streams::OBSERVATION);
    match *noise {
        NoiseModel::None => Ok(clean),
        NoiseModel::Gaussian { sigma } => {
            let z = Normal::new(0.0, 1.0).expect("unit normal");
            Ok(clean.into_iter().map(|v| v + sigma * z.sample(&mut rng)).collect())
        }
        NoiseModel::Bimodal { amplitude, prob } => Ok(clean
            .into_iter()
            .map(|v| if rng.random_bool(prob) { v + amplitude } else { v - amplitude })
            .collect()),
        NoiseModel::Poisson { scale } => clean
            .into_iter()
            .map(|v| {
                let rate = scale * v;
                if rate < 0.0 {
                    return Err(CdimError::Domain(format!("negative Poisson rate {rate}")));
                }
                if rate == 0.0 {
                    return Ok(0.0);
                }
                let p = Poisson::new(rate).map_err(|e| CdimError::Domain(e.to_string()))?;
                let count: f64 = p.sample(&mut rng);
                Ok(count / scale)
            })
            .collect(),
    }
}
