//! The `fbo` command line.
//!
//! Exit codes: 0 success, 1 runtime failure (divergence, failed check),
//! 2 invalid invocation, configuration or instance.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DVector;

use crate::config::Config;
use crate::error::Error;
use crate::oracle::{consistency_checks, WeightVector};
use crate::problem::BilevelInstance;
use crate::runner::{
    run_on, sweep, MetricsRow, RunConfig, RunReport, SweepCell, METRICS_HEADER,
};

/// Environment variable capping the number of worker threads.
pub const WORKERS_ENV: &str = "FBO_WORKERS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

const DEFAULT_OUT: &str = "fbo-output";

#[derive(Debug, Parser)]
#[command(name = "fbo", version, about = "Federated bilevel optimization on quadratic instances")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Only print errors.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the configured algorithm and write metrics.
    Run,
    /// Check the exact hypergradient against finite differences and residuals.
    CheckGradients {
        /// Central-difference step.
        #[arg(long, default_value_t = 1e-4)]
        fd_step: f64,
    },
    /// Run the configured parameter grid.
    Sweep,
    /// Print the fully resolved configuration.
    PrintConfig,
}

/// Exit code of a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Validation { .. }
        | Error::Parse { .. }
        | Error::ClientIndex { .. }
        | Error::Dimension { .. } => EXIT_INVALID,
        Error::Io { .. } | Error::Singular { .. } | Error::Divergence { .. } => EXIT_RUNTIME,
    }
}

struct Session {
    config: Config,
    quiet: bool,
}

impl Session {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

fn fail(code: i32, msg: impl AsRef<str>) -> i32 {
    eprintln!("fbo: {}", msg.as_ref());
    code
}

fn load_session(cli: &Cli) -> Result<Session, i32> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| fail(EXIT_INVALID, "--config <path> is required"))?;
    if !path.exists() {
        return Err(fail(
            EXIT_INVALID,
            format!("config file not found: {}", path.display()),
        ));
    }
    let mut config = Config::load(path).map_err(|e| fail(EXIT_INVALID, e.to_string()))?;
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.run.output_dir = Some(out.clone());
    }
    if let Ok(raw) = std::env::var(WORKERS_ENV) {
        let cap: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&k| k >= 1)
            .ok_or_else(|| fail(EXIT_INVALID, format!("{WORKERS_ENV} must be a positive integer, got `{raw}`")))?;
        config.run.workers = Some(config.run.workers.map_or(cap, |w| w.min(cap)));
    }
    Ok(Session {
        config,
        quiet: cli.quiet,
    })
}

fn load_instance(run: &RunConfig) -> Result<BilevelInstance, i32> {
    let instance = run
        .instance
        .load()
        .map_err(|e| fail(EXIT_INVALID, format!("instance: {e}")))?;
    run.validate_for(&instance)
        .map_err(|e| fail(EXIT_INVALID, e.to_string()))?;
    Ok(instance)
}

fn output_dir(run: &RunConfig) -> Result<PathBuf, i32> {
    let dir = run
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    fs::create_dir_all(&dir).map_err(|e| {
        fail(
            EXIT_INVALID,
            format!("cannot create output directory {}: {e}", dir.display()),
        )
    })?;
    Ok(dir)
}

/// Parses `args` (including the program name) and executes the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let session = match load_session(&cli) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let outcome = match cli.command {
        Command::Run => cmd_run(&session),
        Command::CheckGradients { fd_step } => cmd_check_gradients(&session, fd_step),
        Command::Sweep => cmd_sweep(&session),
        Command::PrintConfig => {
            print!("{}", session.config.to_toml());
            Ok(EXIT_OK)
        }
    };
    outcome.unwrap_or_else(|code| code)
}

fn io_fail(path: &Path, e: std::io::Error) -> i32 {
    fail(EXIT_RUNTIME, format!("{}: {e}", path.display()))
}

fn write_summary(
    path: &Path,
    config: &Config,
    status: &str,
    report: Option<&RunReport>,
) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "status = {status:?}")?;
    if let Some(rep) = report {
        writeln!(out, "rounds_completed = {}", rep.final_state.t)?;
        writeln!(out, "min_grad_phi_sq = {:.16e}", rep.min_grad_phi_sq)?;
        writeln!(out, "min_grad_phitilde_sq = {:.16e}", rep.min_grad_phitilde_sq)?;
        if let Some(last) = rep.rows.last() {
            writeln!(out, "final_grad_phi_sq = {:.16e}", last.grad_phi_sq)?;
            writeln!(out, "final_grad_phitilde_sq = {:.16e}", last.grad_phitilde_sq)?;
            writeln!(out, "samples = {}", last.samples)?;
        }
        let x: Vec<String> = rep.final_state.x.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "final_x = [{}]", x.join(", "))?;
        writeln!(out, "objective_weights_note = {:?}", rep.weights_note)?;
        writeln!(out, "mu_g = {:.16e}", rep.constants.mu_g)?;
        writeln!(out, "l1 = {:.16e}", rep.constants.l1)?;
        writeln!(out, "lf_cap = {:.16e}", rep.constants.lf_cap)?;
        writeln!(out, "radius = {:.16e}", rep.final_state.r)?;
        writeln!(out, "projection_violations = {}", rep.projection_violations)?;
        writeln!(out, "local_v_violations = {}", rep.local_v_violations)?;
        writeln!(out, "wall_time_s = {:.6}", rep.wall_time.as_secs_f64())?;
    }
    writeln!(out, "\n# configuration")?;
    write!(out, "{}", config.to_toml())?;
    out.flush()
}

fn cmd_run(s: &Session) -> Result<i32, i32> {
    let run = &s.config.run;
    let instance = load_instance(run)?;
    let dir = output_dir(run)?;
    let final_path = dir.join("metrics.csv");
    let partial_path = dir.join("metrics.csv.partial");
    let summary_path = dir.join("summary.txt");
    let _ = fs::remove_file(&final_path);

    let file = File::create(&partial_path).map_err(|e| io_fail(&partial_path, e))?;
    let mut csv = BufWriter::new(file);
    writeln!(csv, "{METRICS_HEADER}").map_err(|e| io_fail(&partial_path, e))?;
    let mut write_err = None;
    let result = run_on(&instance, run, |row: &MetricsRow| {
        if write_err.is_none() {
            if let Err(e) = writeln!(csv, "{}", row.to_csv()) {
                write_err = Some(e);
            }
        }
    });
    let flushed = csv.flush();
    drop(csv);
    if let Some(e) = write_err.or(flushed.err()) {
        return Err(io_fail(&partial_path, e));
    }

    match result {
        Ok(report) => {
            fs::rename(&partial_path, &final_path).map_err(|e| io_fail(&final_path, e))?;
            write_summary(&summary_path, &s.config, "ok", Some(&report))
                .map_err(|e| io_fail(&summary_path, e))?;
            s.say(format!(
                "{} rounds, min |grad Phi|^2 = {:.3e}, min |grad Phi~|^2 = {:.3e}, metrics in {}",
                report.final_state.t,
                report.min_grad_phi_sq,
                report.min_grad_phitilde_sq,
                final_path.display()
            ));
            Ok(EXIT_OK)
        }
        Err(err) => {
            let status = format!("failed: {err}");
            write_summary(&summary_path, &s.config, &status, None)
                .map_err(|e| io_fail(&summary_path, e))?;
            Err(fail(exit_code(&err).max(EXIT_RUNTIME), status))
        }
    }
}

fn cmd_check_gradients(s: &Session, fd_step: f64) -> Result<i32, i32> {
    if !(fd_step.is_finite() && fd_step > 0.0) {
        return Err(fail(EXIT_INVALID, format!("invalid fd_step: must be > 0, got {fd_step}")));
    }
    let run = &s.config.run;
    let instance = load_instance(run)?;
    let x = run
        .x0
        .as_ref()
        .map(|x| DVector::from_column_slice(x))
        .unwrap_or_else(|| DVector::zeros(instance.d_x()));
    let checks = consistency_checks(&instance, &WeightVector::of(&instance), &x, fd_step);
    let mut all_passed = true;
    for c in &checks {
        all_passed &= c.passed();
        s.say(format!(
            "{:<28} rel_err = {:.3e}  tol = {:.0e}  {}",
            c.name,
            c.error,
            c.tolerance,
            if c.passed() { "PASS" } else { "FAIL" }
        ));
    }
    if all_passed {
        Ok(EXIT_OK)
    } else {
        Err(fail(EXIT_RUNTIME, "gradient checks failed"))
    }
}

fn cell_label(param: &str, value: f64) -> String {
    format!("{param}_{value}")
}

fn write_aggregate(path: &Path, param: &str, cells: &[SweepCell]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(
        out,
        "{param},runs,failures,grad_phi_sq_q1,grad_phi_sq_median,grad_phi_sq_q3,grad_phitilde_sq_q1,grad_phitilde_sq_median,grad_phitilde_sq_q3"
    )?;
    for cell in cells {
        let fmt = |q: Option<crate::runner::Quartiles>| match q {
            Some(q) => format!("{:.16e},{:.16e},{:.16e}", q.q1, q.median, q.q3),
            None => "nan,nan,nan".to_string(),
        };
        writeln!(
            out,
            "{},{},{},{},{}",
            cell.value,
            cell.runs.len(),
            cell.failures(),
            fmt(cell.grad_phi_sq),
            fmt(cell.grad_phitilde_sq)
        )?;
    }
    out.flush()
}

fn cmd_sweep(s: &Session) -> Result<i32, i32> {
    let Some(spec) = &s.config.sweep else {
        return Err(fail(
            EXIT_INVALID,
            "invalid sweep_param: required for the sweep command",
        ));
    };
    let run = &s.config.run;
    let instance = load_instance(run)?;
    let dir = output_dir(run)?;
    let cells = sweep(&instance, run, spec.param, &spec.values, &spec.seeds)
        .map_err(|e| fail(EXIT_INVALID, e.to_string()))?;
    let param = spec.param.to_string();
    let mut failures = 0;
    for cell in &cells {
        for (seed, outcome) in &cell.runs {
            let stem = format!("{}_seed_{seed}", cell_label(&param, cell.value));
            match outcome {
                Ok(rep) => {
                    let path = dir.join(format!("{stem}.csv"));
                    let file = File::create(&path).map_err(|e| io_fail(&path, e))?;
                    crate::runner::write_metrics_csv(BufWriter::new(file), &rep.rows)
                        .map_err(|e| io_fail(&path, e))?;
                }
                Err(msg) => {
                    failures += 1;
                    eprintln!("fbo: {param} = {}, seed {seed}: {msg}", cell.value);
                }
            }
        }
        let median = cell
            .grad_phitilde_sq
            .map_or("n/a".to_string(), |q| format!("{:.3e}", q.median));
        s.say(format!(
            "{param} = {:<8} runs = {}  failures = {}  median min |grad Phi~|^2 = {median}",
            cell.value,
            cell.runs.len(),
            cell.failures()
        ));
    }
    let agg = dir.join("aggregate.csv");
    write_aggregate(&agg, &param, &cells).map_err(|e| io_fail(&agg, e))?;
    if failures > 0 {
        Err(fail(EXIT_RUNTIME, format!("{failures} sweep run(s) failed")))
    } else {
        Ok(EXIT_OK)
    }
}
