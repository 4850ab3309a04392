//! JSON experiment configuration.
//!
//! Relative paths are resolved against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::load_profile;
use crate::constraint::{ConstraintSpec, DiscreteTarget, Objective};
use crate::error::{CdimError, Result};
use crate::measurement::NoiseModel;
use crate::schedule::ScheduleConfig;
use crate::score::{load_model, AnyModel, GmmPrior, ScoreModel};
use crate::solver::{SolverConfig, StepMode};
use crate::tasks::{alternate_prior, default_prior, positive_prior, TaskSpec, DEFAULT_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Default,
    Alternate,
    Positive,
}

fn default_dim() -> usize {
    DEFAULT_DIM
}

/// Where the score model (and, for mixtures, the ground truth) comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    Preset {
        name: Preset,
        #[serde(default = "default_dim")]
        n: usize,
    },
    Gmm {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variances: Vec<Vec<f64>>,
    },
    /// A model file written by `save_model`.
    Model { path: PathBuf },
}

impl PriorSpec {
    /// The mixture itself, or `None` for model files.
    pub fn gmm(&self) -> Result<Option<GmmPrior>> {
        match self {
            PriorSpec::Preset { name, n } => Ok(Some(match name {
                Preset::Default => default_prior(*n)?,
                Preset::Alternate => alternate_prior(*n)?,
                Preset::Positive => positive_prior(*n)?,
            })),
            PriorSpec::Gmm {
                weights,
                means,
                variances,
            } => Ok(Some(GmmPrior::new(weights.clone(), means.clone(), variances.clone())?)),
            PriorSpec::Model { .. } => Ok(None),
        }
    }

    pub fn load(&self) -> Result<AnyModel> {
        match self {
            PriorSpec::Model { path } => load_model(path),
            other => Ok(AnyModel::Gmm(other.gmm()?.expect("mixture spec"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(t) => vec![t.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    L2,
    KlGaussian,
    KlDiscrete,
    PearsonGaussian,
}

/// Bucket count for a derived target, or explicit bucket probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Buckets {
    Count(usize),
    Probs(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintConfig {
    pub objective: ObjectiveKind,
    pub buckets: Option<Buckets>,
    pub edges: Option<Vec<f64>>,
    /// Reference variance for `kl_gaussian`; defaults to the noise variance.
    pub sigma2: Option<f64>,
    pub bin_width: Option<f64>,
    pub smoothing_eps: Option<f64>,
    pub paper_variant_kl: bool,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        ConstraintConfig {
            objective: ObjectiveKind::L2,
            buckets: None,
            edges: None,
            sigma2: None,
            bin_width: None,
            smoothing_eps: None,
            paper_variant_kl: false,
        }
    }
}

/// Buckets used for a Gaussian-derived discrete target when only a count
/// (or nothing) is given.
pub const DEFAULT_BUCKETS: usize = 16;

impl ConstraintConfig {
    pub fn build(&self, noise: &NoiseModel) -> Result<ConstraintSpec> {
        let mut spec = match self.objective {
            ObjectiveKind::L2 => ConstraintSpec::l2(),
            ObjectiveKind::KlGaussian => {
                let sigma2 = match self.sigma2.or(noise.variance()) {
                    Some(v) if v > 0.0 => v,
                    _ => {
                        return Err(CdimError::Config(format!(
                            "kl_gaussian needs constraint.sigma2 or additive noise with positive variance (noise is {})",
                            noise.name()
                        )))
                    }
                };
                ConstraintSpec::kl_gaussian(sigma2)?
            }
            ObjectiveKind::PearsonGaussian => match noise {
                NoiseModel::Poisson { scale } => ConstraintSpec::pearson(*scale)?,
                other => {
                    return Err(CdimError::Config(format!(
                        "pearson_gaussian needs poisson noise, got {}",
                        other.name()
                    )))
                }
            },
            ObjectiveKind::KlDiscrete => ConstraintSpec::kl_discrete(self.discrete_target(noise)?),
        };
        spec.paper_variant_kl = self.paper_variant_kl;
        Ok(spec)
    }

    fn discrete_target(&self, noise: &NoiseModel) -> Result<DiscreteTarget> {
        let mut target = match (&self.edges, &self.buckets) {
            (Some(edges), Some(Buckets::Probs(p))) => DiscreteTarget::new(edges.clone(), p.clone())?,
            (Some(_), _) => {
                return Err(CdimError::Config(
                    "constraint.edges needs constraint.buckets as a list of probabilities".into(),
                ))
            }
            (None, Some(Buckets::Probs(_))) => {
                return Err(CdimError::Config("bucket probabilities need constraint.edges".into()))
            }
            (None, count) => {
                let count = match count {
                    Some(Buckets::Count(c)) => *c,
                    _ => DEFAULT_BUCKETS,
                };
                match *noise {
                    NoiseModel::Bimodal { amplitude, prob } if count == 2 || self.buckets.is_none() => {
                        DiscreteTarget::bimodal(amplitude, prob)?
                    }
                    NoiseModel::Gaussian { sigma } if sigma > 0.0 => {
                        DiscreteTarget::gaussian(sigma, count, 4.0 * sigma)?
                    }
                    other => {
                        return Err(CdimError::Config(format!(
                            "cannot derive a discrete target from {} noise; give constraint.edges and constraint.buckets",
                            other.name()
                        )))
                    }
                }
            }
        };
        if let Some(w) = self.bin_width {
            target = target.with_bin_width(w)?;
        }
        if let Some(e) = self.smoothing_eps {
            target = target.with_smoothing_eps(e)?;
        }
        Ok(target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Kl,
    L2,
}

/// The `solver` block: solver settings plus the algorithm choice and an
/// optional step-size profile file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub algorithm: Option<Algorithm>,
    pub delta: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub step_mode: StepMode,
    pub eta_scale: f64,
    pub eta_max: Option<f64>,
    pub noiseless: bool,
    pub noiseless_tol: f64,
    #[serde(rename = "K_max_final")]
    pub k_max_final: usize,
    pub var_r: f64,
    pub profile: Option<PathBuf>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        SolverSection {
            algorithm: None,
            delta: d.delta,
            k: d.k,
            step_mode: d.step_mode,
            eta_scale: d.eta_scale,
            eta_max: d.eta_max,
            noiseless: d.noiseless,
            noiseless_tol: d.noiseless_tol,
            k_max_final: d.k_max_final,
            var_r: d.early_stop_variance,
            profile: None,
        }
    }
}

impl SolverSection {
    pub fn build(&self) -> Result<SolverConfig> {
        let profile = match &self.profile {
            Some(p) => Some(load_profile(p)?),
            None => None,
        };
        let cfg = SolverConfig {
            delta: self.delta,
            k: self.k,
            step_mode: self.step_mode,
            eta_scale: self.eta_scale,
            eta_max: self.eta_max,
            noiseless: self.noiseless,
            noiseless_tol: self.noiseless_tol,
            k_max_final: self.k_max_final,
            early_stop_variance: self.var_r,
            profile,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RowFormat {
    #[default]
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: RowFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("cdim-out"),
            format: RowFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Solver runs (and exact posterior draws) per observation.
    pub samples: usize,
    pub permutations: usize,
    pub quantile: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            samples: 500,
            permutations: 200,
            quantile: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// `(T', K)` pairs; `delta = T / T'` must divide exactly.
    pub grid: Vec<(usize, usize)>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            grid: vec![(5, 39), (10, 19), (25, 7), (50, 3)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub samples: usize,
    /// Where `calibrate` writes the profile, relative to the output dir.
    pub file: PathBuf,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            samples: crate::calibration::DEFAULT_CALIBRATION_SAMPLES,
            file: PathBuf::from("profile.csv"),
        }
    }
}

fn no_noise() -> NoiseModel {
    NoiseModel::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub schedule: ScheduleConfig,
    pub prior: PriorSpec,
    /// Ground-truth generator; defaults to `prior` when that is a mixture.
    #[serde(default)]
    pub truth: Option<PriorSpec>,
    pub task: OneOrMany<TaskSpec>,
    #[serde(default = "no_noise")]
    pub noise: NoiseModel,
    #[serde(default)]
    pub constraint: ConstraintConfig,
    #[serde(default)]
    pub solver: SolverSection,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
}

/// Formats a JSON error with the offending line.
fn json_error(path: &Path, text: &str, e: &serde_json::Error) -> CdimError {
    let line = e.line();
    let context = text
        .lines()
        .nth(line.saturating_sub(1))
        .map(|l| format!("\n  {line} | {l}"))
        .unwrap_or_default();
    CdimError::Config(format!("{}:{}:{}: {e}{context}", path.display(), line, e.column()))
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| json_error(path, text, &e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for p in [Some(&mut cfg.prior), cfg.truth.as_mut()].into_iter().flatten() {
            if let PriorSpec::Model { path } = p {
                resolve(&base, path);
            }
        }
        if let Some(p) = cfg.solver.profile.as_mut() {
            resolve(&base, p);
        }
        resolve(&base, &mut cfg.output.dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| CdimError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// Load-time checks: referenced files exist, seeds are given, and the
    /// pieces fit together.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(CdimError::Config(m));
        if self.seeds.is_empty() {
            return cfg_err("seeds must be a non-empty list".into());
        }
        if self.task.to_vec().is_empty() {
            return cfg_err("task list is empty".into());
        }
        for p in [Some(&self.prior), self.truth.as_ref()].into_iter().flatten() {
            if let PriorSpec::Model { path } = p {
                if !path.is_file() {
                    return cfg_err(format!("model file {} does not exist", path.display()));
                }
            }
        }
        if self.truth.is_none() && matches!(self.prior, PriorSpec::Model { .. }) {
            return cfg_err("a model-file prior needs a mixture `truth` to draw ground-truth signals".into());
        }
        if matches!(self.truth, Some(PriorSpec::Model { .. })) {
            return cfg_err("truth must be a mixture (preset or gmm)".into());
        }
        if let Some(p) = &self.solver.profile {
            if !p.is_file() {
                return cfg_err(format!("profile file {} does not exist", p.display()));
            }
        }
        self.noise.validate().map_err(|e| CdimError::Config(e.to_string()))?;
        self.schedule.build().map_err(|e| CdimError::Config(e.to_string()))?;
        let spec = self.constraint.build(&self.noise)?;
        match (self.solver.algorithm, spec.is_kl()) {
            (Some(Algorithm::L2), true) => {
                return cfg_err(format!("solver.algorithm l2 cannot run objective {}", spec.name()))
            }
            (Some(Algorithm::Kl), false) => return cfg_err("solver.algorithm kl needs a KL objective".into()),
            _ => {}
        }
        if self.solver.var_r > 0.0 && spec.is_kl() {
            return cfg_err("solver.var_r only applies to the l2 algorithm".into());
        }
        self.solver.build().map_err(|e| CdimError::Config(e.to_string()))?;
        for &(tp, _) in &self.benchmark.grid {
            if tp == 0 || !self.schedule.steps.is_multiple_of(tp) {
                return cfg_err(format!("benchmark T'={tp} does not divide T={}", self.schedule.steps));
            }
        }
        Ok(())
    }

    /// The mixture ground-truth signals are drawn from.
    pub fn truth_gmm(&self) -> Result<GmmPrior> {
        let spec = self.truth.as_ref().unwrap_or(&self.prior);
        spec.gmm()?
            .ok_or_else(|| CdimError::Config("ground truth needs a mixture prior".into()))
    }

    pub fn constraint_spec(&self) -> Result<ConstraintSpec> {
        self.constraint.build(&self.noise)
    }

    pub fn algorithm(&self) -> Result<Algorithm> {
        Ok(match self.constraint_spec()?.objective {
            Objective::L2 => Algorithm::L2,
            _ => Algorithm::Kl,
        })
    }

    /// Loads the model and checks it against the truth dimension.
    pub fn model(&self) -> Result<AnyModel> {
        let model = self.prior.load()?;
        let n = self.truth_gmm()?.dim();
        if model.dim() != n {
            return Err(CdimError::Config(format!(
                "model dimension {} differs from ground-truth dimension {n}",
                model.dim()
            )));
        }
        Ok(model)
    }
}
