//! Per-step expected gradient magnitudes for the calibrated step size.
//!
//! A profile stores, for each outer step of a grid, the mean norm of the
//! projection gradient observed while running the solver with plain
//! gradient normalisation on a handful of calibration signals.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::constraint::ConstraintSpec;
use crate::error::{CdimError, Result};
use crate::measurement::{observe, LinearOperator, NoiseModel};
use crate::rng::streams;
use crate::schedule::{make_time_grid, NoiseSchedule, TimeGrid};
use crate::score::ScoreModel;
use crate::solver::{cdim_solve, SolverConfig, StepMode};

pub const PROFILE_HEADER: &str = "# cdim-profile v1";
pub const DEFAULT_CALIBRATION_SAMPLES: usize = 10;

/// Task identity a profile was calibrated for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fingerprint {
    pub operator: String,
    pub objective: String,
    pub t_prime: usize,
    pub k: usize,
    pub delta: usize,
}

impl Fingerprint {
    pub fn new(op: &dyn LinearOperator, spec: &ConstraintSpec, grid: &TimeGrid, k: usize) -> Self {
        Fingerprint {
            operator: op.name(),
            objective: spec.name().to_string(),
            t_prime: grid.t_prime(),
            k,
            delta: grid.delta(),
        }
    }

    fn parse(s: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for part in s.split(';') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| CdimError::Format(format!("bad fingerprint field {part:?}")))?;
            fields.insert(k.trim(), v.trim());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| CdimError::Format(format!("fingerprint lacks {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| CdimError::Format(format!("fingerprint {k} is not an integer")))
        };
        Ok(Fingerprint {
            operator: get("op")?.to_string(),
            objective: get("objective")?.to_string(),
            t_prime: num("T'")?,
            k: num("K")?,
            delta: num("delta")?,
        })
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "op={};objective={};T'={};K={};delta={}",
            self.operator, self.objective, self.t_prime, self.k, self.delta
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSizeProfile {
    fingerprint: Fingerprint,
    grid: Vec<usize>,
    mean_grad_norm: Vec<f64>,
    std_grad_norm: Vec<f64>,
    counts: Vec<usize>,
    n_samples: usize,
}

impl StepSizeProfile {
    pub fn new(
        fingerprint: Fingerprint,
        grid: Vec<usize>,
        mean_grad_norm: Vec<f64>,
        std_grad_norm: Vec<f64>,
        counts: Vec<usize>,
        n_samples: usize,
    ) -> Result<Self> {
        let len = grid.len();
        if len == 0 || mean_grad_norm.len() != len || std_grad_norm.len() != len || counts.len() != len {
            return Err(CdimError::param("profile columns must be non-empty and of equal length"));
        }
        if len != fingerprint.t_prime {
            return Err(CdimError::param(format!(
                "profile has {len} steps but its fingerprint says T'={}",
                fingerprint.t_prime
            )));
        }
        if mean_grad_norm.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(CdimError::param("profile entries must be finite and positive"));
        }
        Ok(StepSizeProfile {
            fingerprint,
            grid,
            mean_grad_norm,
            std_grad_norm,
            counts,
            n_samples,
        })
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    pub fn grid(&self) -> &[usize] {
        &self.grid
    }

    pub fn mean_grad_norm(&self) -> &[f64] {
        &self.mean_grad_norm
    }

    pub fn std_grad_norm(&self) -> &[f64] {
        &self.std_grad_norm
    }

    /// Gradient norms averaged into each entry.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Refuses use on a task other than the one calibrated.
    pub fn check(&self, expected: &Fingerprint) -> Result<()> {
        if &self.fingerprint != expected {
            return Err(CdimError::Fingerprint {
                expected: expected.to_string(),
                found: self.fingerprint.to_string(),
            });
        }
        Ok(())
    }
}

/// Per-sample gradient norm traces from a calibration run, kept so callers
/// can inspect spread across samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRun {
    pub profile: StepSizeProfile,
    /// `per_sample[i][step]`: mean gradient norm of sample `i` at an outer
    /// step, `None` when every gradient there was zero or skipped.
    pub per_sample: Vec<Vec<Option<f64>>>,
}

/// Runs the solver with instantaneous gradient normalisation on each
/// calibration signal (observed through `op` with `noise`) and averages the
/// gradient norms per outer step over samples and inner iterations.
#[allow(clippy::too_many_arguments)]
pub fn calibrate(
    model: &dyn ScoreModel,
    schedule: &NoiseSchedule,
    op: &dyn LinearOperator,
    spec: &ConstraintSpec,
    noise: &NoiseModel,
    cfg: &SolverConfig,
    calibration_set: &[Vec<f64>],
    seed: u64,
) -> Result<CalibrationRun> {
    if calibration_set.is_empty() {
        return Err(CdimError::param("calibration set is empty"));
    }
    let grid = make_time_grid(schedule, cfg.delta)?;
    let run_cfg = SolverConfig {
        step_mode: StepMode::InstantaneousGrad,
        profile: None,
        noiseless: false,
        ..cfg.clone()
    };
    let traces: Vec<Vec<Vec<f64>>> = calibration_set
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let sample_seed = seed.wrapping_add(i as u64);
            let wrap = |e: CdimError| CdimError::Calibration {
                sample: i,
                detail: e.to_string(),
            };
            let y = observe(op, x, noise, sample_seed ^ (streams::CALIBRATION << 32)).map_err(wrap)?;
            let r = cdim_solve(model, schedule, op, &y, spec, &run_cfg, sample_seed).map_err(wrap)?;
            let norms: Vec<Vec<f64>> = r.trajectory.into_iter().map(|s| s.grad_norms).collect();
            if norms.iter().flatten().any(|g| !g.is_finite()) {
                return Err(CdimError::Calibration {
                    sample: i,
                    detail: "non-finite gradient norm".into(),
                });
            }
            Ok(norms)
        })
        .collect::<Result<_>>()?;

    let steps = grid.t_prime();
    let mut mean = vec![f64::NAN; steps];
    let mut std = vec![0.0; steps];
    let mut counts = vec![0; steps];
    for step in 0..steps {
        let vals: Vec<f64> = traces.iter().flat_map(|t| t[step].iter().copied()).filter(|g| *g > 0.0).collect();
        if vals.is_empty() {
            continue;
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        mean[step] = m;
        std[step] = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64).sqrt();
        counts[step] = vals.len();
    }
    fill_gaps(&mut mean).ok_or_else(|| CdimError::Calibration {
        sample: 0,
        detail: "no non-zero gradients were observed (is K = 0?)".into(),
    })?;
    let per_sample = traces
        .iter()
        .map(|t| {
            t.iter()
                .map(|g| {
                    let v: Vec<f64> = g.iter().copied().filter(|v| *v > 0.0).collect();
                    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
                })
                .collect()
        })
        .collect();
    let profile = StepSizeProfile::new(
        Fingerprint::new(op, spec, &grid, cfg.k),
        grid.steps().to_vec(),
        mean,
        std,
        counts,
        calibration_set.len(),
    )?;
    Ok(CalibrationRun { profile, per_sample })
}

/// Fills NaN entries from the nearest populated step (earlier on ties).
fn fill_gaps(v: &mut [f64]) -> Option<()> {
    let known: Vec<usize> = (0..v.len()).filter(|&i| !v[i].is_nan()).collect();
    if known.is_empty() {
        return None;
    }
    let src = v.to_vec();
    for (i, slot) in v.iter_mut().enumerate() {
        if slot.is_nan() {
            let j = *known.iter().min_by_key(|&&j| (j.abs_diff(i), j)).expect("non-empty");
            *slot = src[j];
        }
    }
    Some(())
}

pub fn write_profile<W: Write>(mut w: W, profile: &StepSizeProfile) -> Result<()> {
    writeln!(w, "{PROFILE_HEADER}")?;
    writeln!(w, "# fingerprint: {}", profile.fingerprint)?;
    writeln!(w, "# samples: {}", profile.n_samples)?;
    writeln!(w, "t,mean_grad_norm,std_grad_norm,n")?;
    for i in 0..profile.grid.len() {
        writeln!(
            w,
            "{},{:?},{:?},{}",
            profile.grid[i], profile.mean_grad_norm[i], profile.std_grad_norm[i], profile.counts[i]
        )?;
    }
    Ok(())
}

pub fn save_profile(profile: &StepSizeProfile, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write_profile(&mut f, profile)?;
    f.flush()?;
    Ok(())
}

pub fn read_profile<R: BufRead>(r: R) -> Result<StepSizeProfile> {
    let mut lines = r.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| CdimError::Format("profile file ends early".into()))
    };
    if next()?.trim() != PROFILE_HEADER {
        return Err(CdimError::Format("not a cdim profile (bad header)".into()));
    }
    let fp_line = next()?;
    let fingerprint = Fingerprint::parse(
        fp_line
            .strip_prefix("# fingerprint: ")
            .ok_or_else(|| CdimError::Format("missing fingerprint line".into()))?,
    )?;
    let samples: usize = next()?
        .strip_prefix("# samples: ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| CdimError::Format("missing samples line".into()))?;
    if next()?.trim() != "t,mean_grad_norm,std_grad_norm,n" {
        return Err(CdimError::Format("unexpected profile columns".into()));
    }
    let (mut grid, mut mean, mut std, mut counts) = (vec![], vec![], vec![], vec![]);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || CdimError::Format(format!("bad profile row {line:?}"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        grid.push(f[0].parse().map_err(|_| bad())?);
        mean.push(f[1].parse().map_err(|_| bad())?);
        std.push(f[2].parse().map_err(|_| bad())?);
        counts.push(f[3].parse().map_err(|_| bad())?);
    }
    StepSizeProfile::new(fingerprint, grid, mean, std, counts, samples)
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<StepSizeProfile> {
    read_profile(BufReader::new(fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::half_mask;
    use crate::schedule::make_linear_schedule;
    use crate::score::GmmPrior;

    fn setup() -> (GmmPrior, NoiseSchedule, crate::measurement::Operator) {
        let g = GmmPrior::new(
            vec![0.5, 0.5],
            vec![vec![1.0, 0.0, -1.0, 0.5], vec![-1.0, 0.5, 1.0, 0.0]],
            vec![vec![0.1; 4], vec![0.2; 4]],
        )
        .unwrap();
        (g, make_linear_schedule(1000, 1e-4, 0.02).unwrap(), half_mask(4).unwrap())
    }

    #[test]
    fn calibrate_shape_and_round_trip() {
        let (g, s, op) = setup();
        let cfg = SolverConfig { delta: 100, k: 3, ..SolverConfig::default() };
        let set = crate::oracle::sample_gmm(&g, 4, 1).unwrap();
        let noise = NoiseModel::Gaussian { sigma: 0.05 };
        let run = calibrate(&g, &s, op.as_ref(), &ConstraintSpec::l2(), &noise, &cfg, &set, 7).unwrap();
        let p = &run.profile;
        assert_eq!(p.mean_grad_norm().len(), 10);
        assert!(p.mean_grad_norm().iter().all(|v| *v > 0.0));
        let again = calibrate(&g, &s, op.as_ref(), &ConstraintSpec::l2(), &noise, &cfg, &set, 7).unwrap();
        assert_eq!(run, again);

        let mut buf = Vec::new();
        write_profile(&mut buf, p).unwrap();
        let back = read_profile(&buf[..]).unwrap();
        assert_eq!(&back, p);

        let other = make_time_grid(&s, 50).unwrap();
        let fp = Fingerprint::new(op.as_ref(), &ConstraintSpec::l2(), &other, 3);
        assert!(matches!(p.check(&fp), Err(CdimError::Fingerprint { .. })));
    }

    #[test]
    fn gaps_take_nearest() {
        let mut v = [f64::NAN, 2.0, f64::NAN, f64::NAN, 5.0, f64::NAN];
        fill_gaps(&mut v).unwrap();
        assert_eq!(v, [2.0, 2.0, 2.0, 5.0, 5.0, 5.0]);
        assert!(fill_gaps(&mut [f64::NAN]).is_none());
    }

    #[test]
    fn rejects_bad_files() {
        assert!(read_profile(&b"hello\n"[..]).is_err());
        assert!(calibrate(
            &setup().0,
            &setup().1,
            setup().2.as_ref(),
            &ConstraintSpec::l2(),
            &NoiseModel::None,
            &SolverConfig::default(),
            &[],
            0
        )
        .is_err());
    }
}
