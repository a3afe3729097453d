//! Subcommands of the `epds` binary.
//!
//! Every command returns an exit code: 0 on success, 1 on invalid input or a failed
//! verification, 2 when a simulation blows up. Errors go to stderr as one JSON object.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{debug, info};
use serde::Serialize;

use epds::scenario::{builtin, Loaded, Scenario, ScenarioError, BUILTIN_NAMES};
use epds::sim::{convergence_study, integrate, SimOptions, TraceSummary};
use epds::suites::{
    run_krasovskii_suite, run_projection_suite, KrasovskiiSuiteConfig, ProjectionSuiteConfig,
};
use epds::Error;

#[derive(Debug, Parser)]
#[command(name = "epds", version, about = "Partial projections, sector closed loops and their verification suites")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write `trace.csv` and `summary.json`.
    Run {
        /// Scenario JSON file, or a builtin name (higs_benchmark, tracking, step_input, blowup).
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        /// Step size; overrides the scenario.
        #[arg(long)]
        h: Option<f64>,
        /// Horizon; overrides the scenario.
        #[arg(long = "T")]
        horizon: Option<f64>,
    },
    /// Compare the KKT projection with the brute-force oracle on random instances.
    VerifyProjection {
        #[arg(long, default_value_t = 10_000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        max_dim: usize,
    },
    /// Check Krasovskii equality on random sets and the sector failure pattern.
    VerifyKrasovskii {
        #[arg(long, default_value_t = 1_000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rerun a scenario for several step sizes and report residual decay.
    Sweep {
        scenario: String,
        /// Comma-separated, strictly decreasing.
        #[arg(long, value_delimiter = ',', required = true)]
        h_list: Vec<f64>,
        #[arg(long = "T")]
        horizon: Option<f64>,
    },
}

/// Error object written to stderr.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    pub message: String,
    #[serde(skip)]
    pub exit_code: u8,
}

impl CliError {
    fn invalid(field: &str, message: impl Into<String>) -> Self {
        Self {
            kind: "InvalidInput",
            field: Some(field.into()),
            line: None,
            message: message.into(),
            exit_code: 1,
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            kind: "Io",
            field: None,
            line: None,
            message: format!("{}: {e}", path.display()),
            exit_code: 1,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        Self {
            kind: "InvalidScenario",
            field: Some(e.field),
            line: e.line,
            message: e.message,
            exit_code: 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (kind, exit_code) = match &e {
            Error::StateExploded { .. } => ("StateExploded", 2),
            Error::Extrapolation { .. } => ("Extrapolation", 1),
            Error::InvalidParameter { .. } => ("InvalidParameter", 1),
            Error::InitialStateOutsideSet { .. } => ("InitialStateOutsideSet", 1),
            _ => ("Numerical", 1),
        };
        let field = match &e {
            Error::InvalidParameter { name, .. } => Some((*name).to_string()),
            Error::InitialStateOutsideSet { .. } => Some("initial_state".into()),
            _ => None,
        };
        Self {
            kind,
            field,
            line: None,
            message: e.to_string(),
            exit_code,
        }
    }
}

/// A file path, or a builtin scenario name when no such file exists.
pub fn load_scenario(arg: &str) -> Result<Loaded, CliError> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Some(sc) = builtin(arg) {
            debug!("using builtin scenario {arg}");
            return Ok(sc.load()?);
        }
        return Err(CliError::invalid(
            "scenario",
            format!(
                "no such file and not a builtin ({}): {arg}",
                BUILTIN_NAMES.join(", ")
            ),
        ));
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(Scenario::from_json(&text)?)
}

fn check_positive(field: &str, x: Option<f64>) -> Result<(), CliError> {
    match x {
        Some(v) if !(v > 0.0 && v.is_finite()) => {
            Err(CliError::invalid(field, format!("must be positive and finite, got {v}")))
        }
        _ => Ok(()),
    }
}

fn horizon_of(l: &Loaded, horizon: Option<f64>) -> Result<f64, CliError> {
    check_positive("T", horizon)?;
    let t = horizon.unwrap_or(l.scenario.horizon);
    if let Some(end) = l.scenario.input.end() {
        if end < t {
            return Err(CliError::invalid("T", format!("input signal ends at {end}")));
        }
    }
    Ok(t)
}

fn options(l: &Loaded) -> SimOptions {
    SimOptions {
        scheme: l.scenario.scheme.unwrap_or_default(),
        ..SimOptions::default()
    }
}

/// Write `bytes` to `path` through a temporary file in the same directory.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    scenario: &'a str,
    h: f64,
    horizon: f64,
    #[serde(flatten)]
    summary: TraceSummary,
}

pub fn cmd_run(
    scenario: &str,
    out: &Path,
    h: Option<f64>,
    horizon: Option<f64>,
) -> Result<(), CliError> {
    let l = load_scenario(scenario)?;
    check_positive("h", h)?;
    let h = h.unwrap_or(l.step);
    let horizon = horizon_of(&l, horizon)?;
    info!("run {}: h = {h}, T = {horizon}", l.scenario.name);
    let trace = integrate(&l.system, &l.xi0, &l.scenario.input, horizon, h, &options(&l))?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut csv = Vec::new();
    trace
        .write_csv(&mut csv)
        .map_err(|e| CliError::io(out, e))?;
    write_atomic(&out.join("trace.csv"), &csv)?;
    let summary = RunSummary {
        scenario: &l.scenario.name,
        h,
        horizon,
        summary: trace.summary(),
    };
    write_atomic(&out.join("summary.json"), pretty(&summary).as_bytes())?;
    info!("{} steps written to {}", trace.steps(), out.display());
    Ok(())
}

/// Returns the report and whether it passed.
pub fn cmd_verify_projection(count: usize, seed: u64, max_dim: usize) -> Result<(String, bool), CliError> {
    let cfg = ProjectionSuiteConfig {
        count,
        seed,
        max_dim,
        ..ProjectionSuiteConfig::default()
    };
    let report = run_projection_suite(&cfg)?;
    info!(
        "{} instances checked, {} mismatches, max discrepancy {:.3e}",
        report.checked, report.mismatches, report.max_discrepancy
    );
    Ok((pretty(&report), report.passed()))
}

pub fn cmd_verify_krasovskii(count: usize, seed: u64) -> Result<(String, bool), CliError> {
    let cfg = KrasovskiiSuiteConfig {
        count,
        seed,
        ..KrasovskiiSuiteConfig::default()
    };
    let report = run_krasovskii_suite(&cfg)?;
    Ok((pretty(&report), report.passed()))
}

pub fn cmd_sweep(scenario: &str, h_list: &[f64], horizon: Option<f64>) -> Result<String, CliError> {
    let l = load_scenario(scenario)?;
    let horizon = horizon_of(&l, horizon)?;
    let report = convergence_study(&l.system, &l.xi0, &l.scenario.input, horizon, h_list, &options(&l))?;
    Ok(pretty(&report))
}

// A closed pipe downstream (`| head`) is not an error worth a panic.
fn emit(report: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{report}");
}

/// Dispatch; prints reports to stdout and errors to stderr. Returns the exit code.
pub fn execute(cli: Cli) -> u8 {
    let result = match cli.command {
        Command::Run {
            scenario,
            out,
            h,
            horizon,
        } => cmd_run(&scenario, &out, h, horizon).map(|()| 0),
        Command::VerifyProjection {
            count,
            seed,
            max_dim,
        } => cmd_verify_projection(count, seed, max_dim).map(|(r, ok)| {
            emit(&r);
            if ok { 0 } else { 1 }
        }),
        Command::VerifyKrasovskii { count, seed } => {
            cmd_verify_krasovskii(count, seed).map(|(r, ok)| {
                emit(&r);
                if ok { 0 } else { 1 }
            })
        }
        Command::Sweep {
            scenario,
            h_list,
            horizon,
        } => cmd_sweep(&scenario, &h_list, horizon).map(|r| {
            emit(&r);
            0
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code
        }
    }
}
