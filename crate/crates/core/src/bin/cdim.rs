use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cdim::harness::{BatchReport, ExperimentConfig, Harness, RowFormat, RunOptions};
use cdim::CdimError;

#[derive(Parser)]
#[command(name = "cdim", version, about = "Constrained diffusion solvers for noisy linear inverse problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, ValueEnum)]
enum SignalFormat {
    Bin,
    Csv,
}

impl SignalFormat {
    fn ext(self) -> &'static str {
        match self {
            SignalFormat::Bin => "bin",
            SignalFormat::Csv => "csv",
        }
    }
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds (overrides `seeds`).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Encoding of signal files.
    #[arg(long, value_enum, default_value = "bin")]
    signal: SignalFormat,
}

#[derive(Subcommand)]
enum Command {
    /// Unconditional DDIM samples, one signal file per seed.
    Sample(Common),
    /// A single solve on the first task and seed.
    Solve(Common),
    /// Calibrate a step-size profile for the configured task.
    Calibrate(Common),
    /// Compare solver output clouds with exact posterior draws.
    OracleCompare(Common),
    /// Sweep the (T', K) grid and check evaluation counts.
    Benchmark(Common),
    /// Run every (task, seed) cell of the config.
    Run(Common),
}

fn setup(c: &Common) -> Result<(Harness, RunOptions), CdimError> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = &c.seeds {
        cfg.seeds = s.clone();
    }
    cfg.validate()?;
    let mut opts = RunOptions::from_config(&cfg);
    if let Some(o) = &c.out {
        opts.out = o.clone();
    }
    opts.resume = c.resume;
    opts.jobs = c.jobs;
    if let Some(f) = c.format {
        opts.format = match f {
            Format::Csv => RowFormat::Csv,
            Format::Jsonl => RowFormat::Jsonl,
        };
    }
    Ok((Harness::new(cfg)?, opts))
}

fn batch_exit(report: &BatchReport) -> ExitCode {
    println!(
        "{} cells ({} resumed) -> {}",
        report.rows.len(),
        report.resumed,
        report.results_path.display()
    );
    if report.failures.is_empty() {
        return ExitCode::SUCCESS;
    }
    eprintln!("{} cells failed:", report.failures.len());
    for (id, e) in &report.failures {
        eprintln!("  {id}: {e}");
    }
    ExitCode::from(2)
}

fn dispatch(cmd: &Command) -> Result<ExitCode, CdimError> {
    match cmd {
        Command::Sample(c) => {
            let (h, o) = setup(c)?;
            for p in h.sample(&o.out, c.signal.ext())? {
                println!("{}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Solve(c) => {
            let (h, o) = setup(c)?;
            if h.config.seeds.len() != 1 || h.tasks.len() != 1 {
                return Err(CdimError::Config("solve needs exactly one seed and one task".into()));
            }
            let row = h.solve(h.config.seeds[0], &o.out, c.signal.ext())?;
            let path = o.out.join(match o.format {
                RowFormat::Csv => "solve.csv",
                RowFormat::Jsonl => "solve.jsonl",
            });
            cdim::harness::write_rows(&path, std::slice::from_ref(&row), o.format)?;
            println!("{}", serde_json::to_string(&row).expect("rows serialise"));
            if row.error.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("solve failed: {}", row.error);
                Ok(ExitCode::from(2))
            }
        }
        Command::Calibrate(c) => {
            let (h, o) = setup(c)?;
            let (profile, path) = h.calibrate(&o.out)?;
            println!(
                "calibrated {} steps on {} samples -> {}",
                profile.grid().len(),
                profile.n_samples(),
                path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::OracleCompare(c) => {
            let (h, o) = setup(c)?;
            let (summaries, report) = h.oracle_compare(&o)?;
            for s in &summaries {
                println!(
                    "{} seed {}: energy distance {:.6} vs null q{:.0} {:.6} -> {}",
                    s.task,
                    s.seed,
                    s.energy_distance,
                    s.quantile * 100.0,
                    s.null_quantile,
                    if s.pass { "pass" } else { "fail" }
                );
            }
            Ok(batch_exit(&report))
        }
        Command::Benchmark(c) => {
            let (h, o) = setup(c)?;
            let b = h.benchmark(&o)?;
            println!(
                "wall time = {:.3e} + {:.3e} * evals (R^2 = {:.4})",
                b.intercept, b.slope, b.r_squared
            );
            for v in &b.accounting_violations {
                eprintln!("evaluation count mismatch: {v}");
            }
            let code = batch_exit(&b.batch);
            if b.accounting_violations.is_empty() {
                Ok(code)
            } else {
                Ok(ExitCode::from(2))
            }
        }
        Command::Run(c) => {
            let (h, o) = setup(c)?;
            Ok(batch_exit(&h.run(&o)?))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
