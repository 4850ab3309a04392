//! Noise schedules and accelerated time grids.

use serde::{Deserialize, Serialize};

use crate::error::{CdimError, Result};

/// Largest admissible cumulative signal retention at the final timestep.
pub const TERMINAL_ALPHA_BAR_MAX: f64 = 1e-4;

/// Cumulative signal-retention sequence `alpha_bar[0..=T]`.
///
/// `alpha_bar[0] == 1`, strictly decreasing, and `alpha_bar[T]` close enough
/// to zero that `x_T` is indistinguishable from white noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_linear_schedule(self.steps, self.beta_min, self.beta_max)
    }
}

/// Linear-beta schedule: `beta_s` interpolates `beta_min..=beta_max` over
/// `s = 1..=T` and `alpha_bar[t] = prod_{s<=t} (1 - beta_s)`.
pub fn make_linear_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(CdimError::param("schedule needs T >= 1"));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(CdimError::param(format!(
            "need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
        )));
    }
    let mut alpha_bar = Vec::with_capacity(steps + 1);
    alpha_bar.push(1.0);
    let mut acc = 1.0;
    for s in 1..=steps {
        let frac = if steps == 1 {
            0.0
        } else {
            (s - 1) as f64 / (steps - 1) as f64
        };
        let beta = beta_min + (beta_max - beta_min) * frac;
        acc *= 1.0 - beta;
        alpha_bar.push(acc);
    }
    NoiseSchedule::from_alpha_bar(alpha_bar)
}

impl NoiseSchedule {
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(CdimError::param("alpha_bar needs at least two entries"));
        }
        if alpha_bar[0] != 1.0 {
            return Err(CdimError::param("alpha_bar[0] must be exactly 1"));
        }
        if alpha_bar.windows(2).any(|w| !(w[1] < w[0]) || w[1] < 0.0) {
            return Err(CdimError::param(
                "alpha_bar must be strictly decreasing within [0, 1]",
            ));
        }
        let last = *alpha_bar.last().unwrap();
        if last > TERMINAL_ALPHA_BAR_MAX {
            return Err(CdimError::param(format!(
                "alpha_bar[T] = {last:e} does not reach pure noise (<= {TERMINAL_ALPHA_BAR_MAX:e})"
            )));
        }
        Ok(NoiseSchedule { alpha_bar })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn at(&self, t: usize) -> crate::score::Timestep {
        crate::score::Timestep {
            t,
            alpha_bar: self.alpha_bar[t],
        }
    }
}

/// Descending outer-loop timesteps `T, T - delta, ...` (all positive).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeGrid {
    steps: Vec<usize>,
    delta: usize,
}

pub fn make_time_grid(schedule: &NoiseSchedule, delta: usize) -> Result<TimeGrid> {
    let total = schedule.steps();
    if delta == 0 || delta > total {
        return Err(CdimError::param(format!(
            "stride delta must lie in [1, {total}], got {delta}"
        )));
    }
    let steps: Vec<usize> = (1..=total).rev().step_by(delta).collect();
    Ok(TimeGrid { steps, delta })
}

impl TimeGrid {
    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    /// `T' = ceil(T / delta)`, the number of outer denoising steps.
    pub fn t_prime(&self) -> usize {
        self.steps.len()
    }

    /// Target time after the outer step at `t`; the last step lands on 0.
    pub fn next(&self, t: usize) -> usize {
        t.saturating_sub(self.delta)
    }
}
