//! Experiment harness behind the `cdim` binary.
//!
//! A batch is the cross product of tasks, seeds and (for benchmarks) a
//! `(T', K)` grid. Each cell draws its own ground truth and observation from
//! the seed, runs the solver, and yields one [`ResultRow`]. Workers send
//! finished cells to a single collector thread that owns all file writes.

mod config;

pub use config::{
    Algorithm, BenchmarkConfig, Buckets, CalibrationConfig, ConstraintConfig, ExperimentConfig, ObjectiveKind,
    OneOrMany, OracleConfig, OutputConfig, Preset, PriorSpec, RowFormat, SolverSection, DEFAULT_BUCKETS,
};

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, save_profile, StepSizeProfile};
use crate::constraint::{empirical_moments, evaluate_prediction, ConstraintSpec, Objective};
use crate::error::{CdimError, Result};
use crate::measurement::{observe, NoiseModel};
use crate::oracle::{energy_distance, exact_posterior, quantile, sample_gmm, split_null};
use crate::rng::{stream_rng, streams};
use crate::schedule::{make_time_grid, NoiseSchedule};
use crate::score::{AnyModel, GmmPrior, ScoreModel};
use crate::signal_io::write_signal;
use crate::solver::{cdim_solve, unconditional_ddim, SolveResult, SolverConfig};
use crate::tasks::TaskSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Diverged,
    Failed,
}

/// One line of the results file.
///
/// Columns, in order: `seed, task, algorithm, objective, step_mode, t_prime,
/// k, model_evals, final_evals, early_stopped, wall_time_s,
/// final_objective, residual_mean, residual_var, discrete_kl, residual_inf,
/// psnr, psnr_peak, energy_distance, status, error`. Optional metrics are
/// empty when they do not apply or the cell failed. `model_evals` excludes
/// the noiseless final projection, which is counted in `final_evals`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub seed: u64,
    pub task: String,
    pub algorithm: String,
    pub objective: String,
    pub step_mode: String,
    pub t_prime: usize,
    pub k: usize,
    pub model_evals: usize,
    pub final_evals: usize,
    pub early_stopped: bool,
    pub wall_time_s: f64,
    pub final_objective: Option<f64>,
    pub residual_mean: Option<f64>,
    pub residual_var: Option<f64>,
    pub discrete_kl: Option<f64>,
    pub residual_inf: Option<f64>,
    pub psnr: Option<f64>,
    pub psnr_peak: Option<f64>,
    pub energy_distance: Option<f64>,
    pub status: CellStatus,
    pub error: String,
}

pub const ROW_COLUMNS: [&str; 21] = [
    "seed",
    "task",
    "algorithm",
    "objective",
    "step_mode",
    "t_prime",
    "k",
    "model_evals",
    "final_evals",
    "early_stopped",
    "wall_time_s",
    "final_objective",
    "residual_mean",
    "residual_var",
    "discrete_kl",
    "residual_inf",
    "psnr",
    "psnr_peak",
    "energy_distance",
    "status",
    "error",
];

/// `10 log10(peak^2 / mse)` with `peak = max |truth|`; returns `(psnr, peak)`.
pub fn psnr(estimate: &[f64], truth: &[f64]) -> (f64, f64) {
    let peak = truth.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mse = estimate.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / truth.len() as f64;
    (10.0 * (peak * peak / mse).log10(), peak)
}

/// Where and how batch output goes.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out: PathBuf,
    pub resume: bool,
    /// Worker threads; `None` uses rayon's default.
    pub jobs: Option<usize>,
    pub format: RowFormat,
}

impl RunOptions {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        RunOptions {
            out: cfg.output.dir.clone(),
            resume: false,
            jobs: None,
            format: cfg.output.format,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    pub rows: Vec<ResultRow>,
    pub results_path: PathBuf,
    /// `(cell id, message)` for every cell that did not finish.
    pub failures: Vec<(String, String)>,
    pub resumed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub batch: BatchReport,
    /// Cells whose count differs from `T'(K+1)` without an early stop.
    pub accounting_violations: Vec<String>,
    /// Least-squares fit of wall time on model evaluations.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub seed: u64,
    pub task: String,
    pub samples: usize,
    pub failed_solves: usize,
    pub energy_distance: f64,
    pub null_quantile: f64,
    pub quantile: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell {
    task: usize,
    seed: u64,
    delta: usize,
    k: usize,
}

/// Ordinary least squares `y = a + b x`; returns `(b, a, R^2)`.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let b = sxy / sxx;
    (b, my - b * mx, sxy * sxy / (sxx * syy))
}

pub fn write_rows(path: &Path, rows: &[ResultRow], format: RowFormat) -> Result<()> {
    let file = BufWriter::new(fs::File::create(path)?);
    match format {
        RowFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
            w.write_record(ROW_COLUMNS).map_err(csv_err)?;
            for r in rows {
                w.serialize(r).map_err(csv_err)?;
            }
            w.flush()?;
        }
        RowFormat::Jsonl => {
            let mut w = file;
            for r in rows {
                serde_json::to_writer(&mut w, r).map_err(json_err)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        fs::read_to_string(path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(json_err))
            .collect()
    } else {
        csv::Reader::from_path(path)
            .map_err(csv_err)?
            .deserialize()
            .map(|r| r.map_err(csv_err))
            .collect()
    }
}

fn csv_err(e: csv::Error) -> CdimError {
    CdimError::Format(e.to_string())
}

fn json_err(e: serde_json::Error) -> CdimError {
    CdimError::Format(e.to_string())
}

fn results_file(out: &Path, stem: &str, format: RowFormat) -> PathBuf {
    out.join(match format {
        RowFormat::Csv => format!("{stem}.csv"),
        RowFormat::Jsonl => format!("{stem}.jsonl"),
    })
}

/// A loaded configuration, ready to execute.
pub struct Harness {
    pub config: ExperimentConfig,
    pub model: AnyModel,
    pub truth: GmmPrior,
    pub schedule: NoiseSchedule,
    pub spec: ConstraintSpec,
    pub solver: SolverConfig,
    pub tasks: Vec<TaskSpec>,
}

/// Finished cell on its way to the collector.
type Finished = (usize, ResultRow, Option<SolveResult>);

impl Harness {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let model = config.model()?;
        Ok(Harness {
            truth: config.truth_gmm()?,
            schedule: config.schedule.build()?,
            spec: config.constraint_spec()?,
            solver: config.solver.build()?,
            tasks: config.task.to_vec(),
            model,
            config,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(ExperimentConfig::load(path)?)
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    fn cell_id(&self, c: &Cell) -> String {
        format!("{:02}-{}-d{}-k{}-s{}", c.task, self.tasks[c.task].name(), c.delta, c.k, c.seed)
    }

    /// Ground truth and observation of a cell; both depend only on the seed.
    pub fn observation(&self, task: &TaskSpec, seed: u64) -> Result<(Vec<f64>, crate::measurement::Operator, Vec<f64>)> {
        let x_true = self.truth.sample(&mut stream_rng(seed, streams::GROUND_TRUTH));
        let op = task.build(self.dim(), seed)?;
        let y = observe(op.as_ref(), &x_true, &self.config.noise, seed)?;
        Ok((x_true, op, y))
    }

    fn algorithm_name(&self) -> &'static str {
        if self.spec.is_kl() {
            "kl"
        } else {
            "l2"
        }
    }

    fn blank_row(&self, c: &Cell, t_prime: usize) -> ResultRow {
        ResultRow {
            seed: c.seed,
            task: self.tasks[c.task].name().to_string(),
            algorithm: self.algorithm_name().to_string(),
            objective: self.spec.name().to_string(),
            step_mode: self.solver.step_mode.name().to_string(),
            t_prime,
            k: c.k,
            model_evals: 0,
            final_evals: 0,
            early_stopped: false,
            wall_time_s: 0.0,
            final_objective: None,
            residual_mean: None,
            residual_var: None,
            discrete_kl: None,
            residual_inf: None,
            psnr: None,
            psnr_peak: None,
            energy_distance: None,
            status: CellStatus::Ok,
            error: String::new(),
        }
    }

    fn cell_config(&self, c: &Cell) -> SolverConfig {
        SolverConfig {
            delta: c.delta,
            k: c.k,
            ..self.solver.clone()
        }
    }

    /// Fills the metric columns from a finished solve.
    pub fn metrics(&self, row: &mut ResultRow, x_true: &[f64], op: &dyn crate::measurement::LinearOperator, y: &[f64], r: &SolveResult) -> Result<()> {
        let ax = op.apply(&r.x0)?;
        let resid: Vec<f64> = y.iter().zip(&ax).map(|(a, b)| a - b).collect();
        row.model_evals = r.model_evals;
        row.final_evals = r.final_projection.as_ref().map_or(0, |f| f.evals);
        row.early_stopped = r.early_stopped();
        row.wall_time_s = r.wall_time;
        match evaluate_prediction(&self.spec, y, &ax) {
            Ok(e) => {
                row.final_objective = Some(e.value);
                row.residual_mean = Some(e.residual_mean);
                row.residual_var = Some(e.residual_var);
                if matches!(self.spec.objective, Objective::KlDiscrete(_)) {
                    row.discrete_kl = Some(e.value);
                }
            }
            Err(_) => {
                if let Ok((m, v)) = empirical_moments(&resid) {
                    row.residual_mean = Some(m);
                    row.residual_var = Some(v);
                }
            }
        }
        row.residual_inf = Some(resid.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let (p, peak) = psnr(&r.x0, x_true);
        row.psnr = Some(p);
        row.psnr_peak = Some(peak);
        Ok(())
    }

    fn run_cell(&self, c: &Cell) -> (ResultRow, Option<SolveResult>) {
        let grid_len = make_time_grid(&self.schedule, c.delta).map_or(0, |g| g.t_prime());
        let mut row = self.blank_row(c, grid_len);
        let mut attempt = || -> Result<SolveResult> {
            let (x_true, op, y) = self.observation(&self.tasks[c.task], c.seed)?;
            let r = cdim_solve(&self.model, &self.schedule, op.as_ref(), &y, &self.spec, &self.cell_config(c), c.seed)?;
            self.metrics(&mut row, &x_true, op.as_ref(), &y, &r)?;
            Ok(r)
        };
        match attempt() {
            Ok(r) => (row, Some(r)),
            Err(e) => {
                let mut row = self.blank_row(c, grid_len);
                row.status = if matches!(e, CdimError::Divergence { .. }) {
                    CellStatus::Diverged
                } else {
                    CellStatus::Failed
                };
                row.error = e.to_string();
                (row, None)
            }
        }
    }

    fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = jobs {
            b = b.num_threads(j.max(1));
        }
        b.build().map_err(|e| CdimError::Config(format!("thread pool: {e}")))
    }

    fn execute(&self, cells: &[Cell], opts: &RunOptions, stem: &str) -> Result<BatchReport> {
        let cell_dir = opts.out.join("cells").join(stem);
        let traj_dir = opts.out.join("trajectories").join(stem);
        fs::create_dir_all(&cell_dir)?;
        fs::create_dir_all(&traj_dir)?;
        let ids: Vec<String> = cells.iter().map(|c| self.cell_id(c)).collect();

        let mut slots: Vec<Option<ResultRow>> = vec![None; cells.len()];
        let mut todo = Vec::new();
        for (i, id) in ids.iter().enumerate() {
            let done = opts
                .resume
                .then(|| fs::read_to_string(cell_dir.join(format!("{id}.json"))).ok())
                .flatten()
                .and_then(|s| serde_json::from_str::<ResultRow>(&s).ok())
                .filter(|r| r.status == CellStatus::Ok);
            match done {
                Some(r) => slots[i] = Some(r),
                None => todo.push(i),
            }
        }
        let resumed = cells.len() - todo.len();

        let (tx, rx) = mpsc::channel::<Finished>();
        let collector = {
            let ids = ids.clone();
            let cell_dir = cell_dir.clone();
            let traj_dir = traj_dir.clone();
            std::thread::spawn(move || -> Result<Vec<(usize, ResultRow)>> {
                let mut got = Vec::new();
                for (i, row, solve) in rx {
                    if let Some(s) = &solve {
                        let f = BufWriter::new(fs::File::create(traj_dir.join(format!("{}.json", ids[i])))?);
                        serde_json::to_writer(f, s).map_err(json_err)?;
                    }
                    fs::write(
                        cell_dir.join(format!("{}.json", ids[i])),
                        serde_json::to_string(&row).map_err(json_err)?,
                    )?;
                    got.push((i, row));
                }
                Ok(got)
            })
        };
        Self::pool(opts.jobs)?.install(|| {
            todo.par_iter().for_each_with(tx, |tx, &i| {
                let (row, solve) = self.run_cell(&cells[i]);
                // The collector only hangs up after an I/O error, which
                // surfaces through its join handle below.
                let _ = tx.send((i, row, solve));
            })
        });
        for (i, row) in collector.join().expect("collector thread panicked")? {
            slots[i] = Some(row);
        }

        let rows: Vec<ResultRow> = slots.into_iter().map(|r| r.expect("every cell reported")).collect();
        let failures = rows
            .iter()
            .zip(&ids)
            .filter(|(r, _)| r.status != CellStatus::Ok)
            .map(|(r, id)| (id.clone(), r.error.clone()))
            .collect();
        let results_path = results_file(&opts.out, stem, opts.format);
        write_rows(&results_path, &rows, opts.format)?;
        Ok(BatchReport {
            rows,
            results_path,
            failures,
            resumed,
        })
    }

    /// Every `(task, seed)` cell with the configured solver settings.
    pub fn run(&self, opts: &RunOptions) -> Result<BatchReport> {
        let cells: Vec<Cell> = (0..self.tasks.len())
            .flat_map(|task| {
                self.config.seeds.iter().map(move |&seed| Cell {
                    task,
                    seed,
                    delta: self.solver.delta,
                    k: self.solver.k,
                })
            })
            .collect();
        self.execute(&cells, opts, "results")
    }

    /// Sweeps the `(T', K)` grid for every task and seed and checks the
    /// evaluation count of each run.
    pub fn benchmark(&self, opts: &RunOptions) -> Result<BenchmarkReport> {
        let t = self.schedule.steps();
        let mut cells = Vec::new();
        for task in 0..self.tasks.len() {
            for &(tp, k) in &self.config.benchmark.grid {
                for &seed in &self.config.seeds {
                    cells.push(Cell {
                        task,
                        seed,
                        delta: t / tp,
                        k,
                    });
                }
            }
        }
        let batch = self.execute(&cells, opts, "benchmark")?;
        let accounting_violations = batch
            .rows
            .iter()
            .filter(|r| r.status == CellStatus::Ok && !r.early_stopped && r.model_evals != r.t_prime * (r.k + 1))
            .map(|r| format!("{} seed {} T'={} K={}: {} evals", r.task, r.seed, r.t_prime, r.k, r.model_evals))
            .collect();
        let points: Vec<(f64, f64)> = batch
            .rows
            .iter()
            .filter(|r| r.status == CellStatus::Ok)
            .map(|r| (r.model_evals as f64, r.wall_time_s))
            .collect();
        let (slope, intercept, r_squared) = if points.len() >= 2 {
            linear_fit(&points)
        } else {
            (f64::NAN, f64::NAN, f64::NAN)
        };
        Ok(BenchmarkReport {
            batch,
            accounting_violations,
            slope,
            intercept,
            r_squared,
        })
    }

    /// Unconditional DDIM draws, one signal file per seed.
    pub fn sample(&self, out: &Path, signal_ext: &str) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(out)?;
        self.config
            .seeds
            .iter()
            .map(|&seed| {
                let x = unconditional_ddim(&self.model, &self.schedule, self.solver.delta, seed)?;
                let path = out.join(format!("sample_{seed}.{signal_ext}"));
                write_signal(&path, &x)?;
                Ok(path)
            })
            .collect()
    }

    /// One solve on the first task, writing the reconstruction, the
    /// observation, the ground truth and the trajectory.
    pub fn solve(&self, seed: u64, out: &Path, signal_ext: &str) -> Result<ResultRow> {
        fs::create_dir_all(out)?;
        let cell = Cell {
            task: 0,
            seed,
            delta: self.solver.delta,
            k: self.solver.k,
        };
        let (x_true, _, y) = self.observation(&self.tasks[0], seed)?;
        let (row, solve) = self.run_cell(&cell);
        write_signal(out.join(format!("truth_{seed}.{signal_ext}")), &x_true)?;
        write_signal(out.join(format!("observation_{seed}.{signal_ext}")), &y)?;
        if let Some(s) = solve {
            write_signal(out.join(format!("x0_{seed}.{signal_ext}")), &s.x0)?;
            fs::write(out.join(format!("trajectory_{seed}.json")), serde_json::to_string(&s).map_err(json_err)?)?;
        }
        Ok(row)
    }

    /// Calibrates a step-size profile on signals drawn from the truth mixture
    /// and saves it.
    pub fn calibrate(&self, out: &Path) -> Result<(StepSizeProfile, PathBuf)> {
        fs::create_dir_all(out)?;
        let seed = self.config.seeds[0];
        let set = sample_gmm(&self.truth, self.config.calibration.samples, seed)?;
        let op = self.tasks[0].build(self.dim(), seed)?;
        let run = calibrate(&self.model, &self.schedule, op.as_ref(), &self.spec, &self.config.noise, &self.solver, &set, seed)?;
        let path = out.join(&self.config.calibration.file);
        save_profile(&run.profile, &path)?;
        Ok((run.profile, path))
    }

    /// For each seed and task, compares the cloud of solver outputs (one per
    /// solver seed) with exact posterior draws by energy distance, against
    /// the chosen quantile of the oracle-vs-oracle split null.
    pub fn oracle_compare(&self, opts: &RunOptions) -> Result<(Vec<OracleSummary>, BatchReport)> {
        let sigma = match self.config.noise {
            NoiseModel::Gaussian { sigma } if sigma > 0.0 => sigma,
            other => {
                return Err(CdimError::Config(format!(
                    "oracle-compare needs Gaussian noise with sigma > 0 (the exact posterior is only available in \
                     closed form for a Gaussian likelihood); this config uses {} noise",
                    other.name()
                )))
            }
        };
        let oc = &self.config.oracle;
        if oc.samples < 2 {
            return Err(CdimError::Config("oracle.samples must be at least 2".into()));
        }
        fs::create_dir_all(&opts.out)?;
        let pool = Self::pool(opts.jobs)?;
        let mut summaries = Vec::new();
        let mut all_rows = Vec::new();
        let mut failures = Vec::new();
        for (ti, task) in self.tasks.iter().enumerate() {
            for &seed in &self.config.seeds {
                let (x_true, op, y) = self.observation(task, seed)?;
                let cell = Cell {
                    task: ti,
                    seed,
                    delta: self.solver.delta,
                    k: self.solver.k,
                };
                let t_prime = make_time_grid(&self.schedule, cell.delta)?.t_prime();
                let solver_seeds: Vec<u64> = (0..oc.samples as u64).map(|j| seed.wrapping_mul(1_000_003).wrapping_add(j)).collect();
                let outcomes: Vec<(ResultRow, Option<Vec<f64>>)> = pool.install(|| {
                    solver_seeds
                        .par_iter()
                        .map(|&s| {
                            let mut row = self.blank_row(&Cell { seed: s, ..cell }, t_prime);
                            match cdim_solve(&self.model, &self.schedule, op.as_ref(), &y, &self.spec, &self.cell_config(&cell), s)
                                .and_then(|r| self.metrics(&mut row, &x_true, op.as_ref(), &y, &r).map(|_| r))
                            {
                                Ok(r) => (row, Some(r.x0)),
                                Err(e) => {
                                    row.status = CellStatus::Failed;
                                    row.error = e.to_string();
                                    (row, None)
                                }
                            }
                        })
                        .collect()
                });
                let cloud: Vec<Vec<f64>> = outcomes.iter().filter_map(|o| o.1.clone()).collect();
                let failed = outcomes.len() - cloud.len();
                let post = exact_posterior(&self.truth, op.as_ref(), sigma * sigma, &y)?;
                let pool_samples = sample_gmm(&post, 2 * oc.samples, seed)?;
                let null = split_null(&pool_samples, oc.samples, oc.permutations, seed)?;
                let threshold = quantile(&null, oc.quantile)?;
                let ed = if cloud.is_empty() {
                    f64::INFINITY
                } else {
                    energy_distance(&cloud, &pool_samples[..oc.samples])?
                };
                for (row, _) in outcomes {
                    if row.status != CellStatus::Ok {
                        failures.push((format!("{}-{}-s{}", ti, task.name(), row.seed), row.error.clone()));
                    }
                    all_rows.push(ResultRow {
                        energy_distance: Some(ed),
                        ..row
                    });
                }
                summaries.push(OracleSummary {
                    seed,
                    task: task.name().to_string(),
                    samples: oc.samples,
                    failed_solves: failed,
                    energy_distance: ed,
                    null_quantile: threshold,
                    quantile: oc.quantile,
                    pass: ed <= threshold && failed == 0,
                });
            }
        }
        let results_path = results_file(&opts.out, "oracle", opts.format);
        write_rows(&results_path, &all_rows, opts.format)?;
        let mut w = csv::Writer::from_path(opts.out.join("oracle_summary.csv")).map_err(csv_err)?;
        for s in &summaries {
            w.serialize(s).map_err(csv_err)?;
        }
        w.flush()?;
        Ok((
            summaries,
            BatchReport {
                rows: all_rows,
                results_path,
                failures,
                resumed: 0,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harness(extra: &str, dir: &Path) -> Harness {
        let text = format!(
            r#"{{"prior": {{"kind": "preset", "name": "default", "n": 8}}, "task": [{{"kind": "half_mask"}}, {{"kind": "identity"}}],
                "noise": {{"kind": "gaussian", "sigma": 0.05}}, "seeds": [3, 1, 2],
                "solver": {{"delta": 100, "K": 2}}, "output": {{"dir": "{}"}} {extra}}}"#,
            dir.display()
        );
        Harness::new(ExperimentConfig::parse(&text, &dir.join("c.json")).unwrap()).unwrap()
    }

    #[test]
    fn rows_round_trip_in_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let h = harness("", dir.path());
        for format in [RowFormat::Csv, RowFormat::Jsonl] {
            let opts = RunOptions {
                format,
                ..RunOptions::from_config(&h.config)
            };
            let report = h.run(&opts).unwrap();
            assert_eq!(report.rows.len(), 6);
            assert!(report.failures.is_empty());
            assert_eq!(read_rows(&report.results_path).unwrap(), report.rows);
            for r in &report.rows {
                assert!(r.model_evals <= r.t_prime * (r.k + 1));
            }
        }
        let header = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(header.lines().next().unwrap(), ROW_COLUMNS.join(","));
    }

    #[test]
    fn resume_skips_finished_cells() {
        let dir = tempfile::tempdir().unwrap();
        let h = harness("", dir.path());
        let mut opts = RunOptions::from_config(&h.config);
        let first = h.run(&opts).unwrap();
        opts.resume = true;
        let second = h.run(&opts).unwrap();
        assert_eq!(second.resumed, 6);
        assert_eq!(first.rows, second.rows);
    }

    #[test]
    fn oracle_compare_refuses_non_gaussian_noise() {
        let dir = tempfile::tempdir().unwrap();
        let mut h = harness("", dir.path());
        h.config.noise = NoiseModel::Bimodal { amplitude: 0.5, prob: 0.5 };
        let e = h.oracle_compare(&RunOptions::from_config(&h.config)).unwrap_err();
        assert!(matches!(e, CdimError::Config(ref m) if m.contains("Gaussian")), "{e}");
    }

    #[test]
    fn linear_fit_recovers_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 2.0 + 3.0 * i as f64)).collect();
        let (b, a, r2) = linear_fit(&pts);
        assert!((b - 3.0).abs() < 1e-12 && (a - 2.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_uses_peak_of_truth() {
        let (p, peak) = psnr(&[1.0, -1.9], &[1.0, -2.0]);
        assert_eq!(peak, 2.0);
        assert!((p - 10.0 * (4.0f64 / 0.005).log10()).abs() < 1e-12);
    }
}
