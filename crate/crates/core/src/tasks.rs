//! Ready-made priors, operators and constraint targets for desk-scale
//! experiments.

use serde::{Deserialize, Serialize};

use crate::constraint::{ConstraintSpec, DiscreteTarget};
use crate::error::Result;
use crate::measurement::{
    blur_operator, compose, downsample_operator, gaussian_kernel, half_mask, identity, random_mask, scale_operator,
    Operator,
};
use crate::score::GmmPrior;

/// Signal length of the built-in priors.
pub const DEFAULT_DIM: usize = 16;

/// Detector gain of the photon-counting task.
pub const POISSON_GAIN: f64 = 50.0;

fn smooth_mixture(n: usize, weights: &[f64], freqs: &[f64], phases: &[f64], amp: f64, offset: f64) -> Result<GmmPrior> {
    let tau = std::f64::consts::TAU;
    let mut means = Vec::new();
    let mut variances = Vec::new();
    for (k, (f, p)) in freqs.iter().zip(phases).enumerate() {
        means.push(
            (0..n)
                .map(|i| offset + amp * (tau * f * i as f64 / n as f64 + p).sin())
                .collect(),
        );
        variances.push(
            (0..n)
                .map(|i| 0.05 + 0.15 * (0.5 + 0.5 * (tau * (i + 3 * k) as f64 / n as f64).cos()))
                .collect(),
        );
    }
    GmmPrior::new(weights.to_vec(), means, variances)
}

/// Three smooth anisotropic components in `R^n` with weights (0.5, 0.3, 0.2).
pub fn default_prior(n: usize) -> Result<GmmPrior> {
    smooth_mixture(n, &[0.5, 0.3, 0.2], &[1.0, 2.0, 0.5], &[0.0, 1.0, 2.5], 1.0, 0.0)
}

/// A second mixture of the same shape family, for transfer checks.
pub fn alternate_prior(n: usize) -> Result<GmmPrior> {
    smooth_mixture(n, &[0.4, 0.35, 0.25], &[1.5, 0.75, 3.0], &[0.5, 2.0, 4.0], 0.9, 0.1)
}

/// Positive-valued mixture for the photon-counting task.
pub fn positive_prior(n: usize) -> Result<GmmPrior> {
    smooth_mixture(n, &[0.5, 0.3, 0.2], &[1.0, 2.0, 0.5], &[0.0, 1.0, 2.5], 0.6, 2.0)
}

/// Measurement operator selection, as found under `task` in a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    // Empty braces so that stray keys are rejected.
    Identity {},
    /// Observes the second half of the signal.
    HalfMask {},
    /// Drops groups of coordinates with probability `mask_prob` (per seed).
    RandomMask {
        mask_prob: f64,
        #[serde(default = "one")]
        group: usize,
    },
    Downsample { factor: usize },
    Blur { kernel_sigma: f64 },
    /// Gaussian blur followed by the half mask.
    MaskedBlur { kernel_sigma: f64 },
    /// Detector gain, for count data.
    Scale { gain: f64 },
}

fn one() -> usize {
    1
}

impl TaskSpec {
    /// `seed` only matters for random masks.
    pub fn build(&self, n: usize, seed: u64) -> Result<Operator> {
        match *self {
            TaskSpec::Identity {} => Ok(identity(n)),
            TaskSpec::HalfMask {} => half_mask(n),
            TaskSpec::RandomMask { mask_prob, group } => random_mask(n, mask_prob, group, seed),
            TaskSpec::Downsample { factor } => downsample_operator(n, factor),
            TaskSpec::Blur { kernel_sigma } => blur_operator(n, gaussian_kernel(kernel_sigma)?),
            TaskSpec::MaskedBlur { kernel_sigma } => {
                compose(half_mask(n)?, blur_operator(n, gaussian_kernel(kernel_sigma)?)?)
            }
            TaskSpec::Scale { gain } => scale_operator(n, gain),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::Identity {} => "identity",
            TaskSpec::HalfMask {} => "half_mask",
            TaskSpec::RandomMask { .. } => "random_mask",
            TaskSpec::Downsample { .. } => "downsample",
            TaskSpec::Blur { .. } => "blur",
            TaskSpec::MaskedBlur { .. } => "masked_blur",
            TaskSpec::Scale { .. } => "scale",
        }
    }

    /// Whether the operator changes with the run seed.
    pub fn is_random(&self) -> bool {
        matches!(self, TaskSpec::RandomMask { .. })
    }
}

/// Two-bucket target for `+-amplitude` noise.
pub fn bimodal_spec(amplitude: f64, prob: f64) -> Result<ConstraintSpec> {
    Ok(ConstraintSpec::kl_discrete(DiscreteTarget::bimodal(amplitude, prob)?))
}
