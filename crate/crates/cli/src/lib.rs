//! Config-driven batch front end: parse and validate a run file, dispatch
//! the scheme, write the JSON report, the per-node CSV and an optional dump.
//!
//! Exit statuses: 0 success, 1 other failure, 2 invalid config (nothing
//! written), 3 solver divergence, 4 verification failure.

pub mod config;
pub mod refine;
pub mod run;
pub mod verify;

use std::path::{Path, PathBuf};

use config::{EnsembleConfig, FixtureConfig, RunConfig, SchemaError, Validated, SCHEMA_VERSION};
use mfbsde::generators::FixtureParams;
use mfbsde::solvers::Scheme;
use serde_json::json;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_SCHEMA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

/// Particle count when no config file is given.
pub const DEFAULT_PARTICLES: usize = 1 << 14;

#[derive(Debug)]
pub enum CliError {
    Schema(SchemaError),
    /// The solver gave up; `trace` holds whatever was recorded.
    Diverged { message: String, trace: PathBuf },
    VerifyFailed { failures: usize, table: PathBuf },
    Other(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => EXIT_SCHEMA,
            CliError::Diverged { .. } => EXIT_DIVERGED,
            CliError::VerifyFailed { .. } => EXIT_VERIFY,
            CliError::Other(_) => EXIT_OTHER,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Schema(e) => write!(f, "{e}"),
            CliError::Diverged { message, trace } => write!(f, "solver diverged: {message}; trace in {}", trace.display()),
            CliError::VerifyFailed { failures, table } => {
                write!(f, "{failures} verification check(s) failed; see {}", table.display())
            }
            CliError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<SchemaError> for CliError {
    fn from(e: SchemaError) -> Self {
        CliError::Schema(e)
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

impl From<mfbsde::Error> for CliError {
    fn from(e: mfbsde::Error) -> Self {
        CliError::Other(e.into())
    }
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<Scheme>,
    #[arg(long)]
    pub fixture: Option<String>,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (relative to the working directory).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown scheme `{s}` (local, global, theta, volterra)"))
}

fn bare_config(fixture: &str, scheme: Scheme) -> RunConfig {
    RunConfig {
        schema_version: SCHEMA_VERSION,
        scheme,
        fixture: FixtureConfig { name: fixture.into(), params: FixtureParams::default() },
        grid: Default::default(),
        ensemble: EnsembleConfig { particles: DEFAULT_PARTICLES, seed: 0, antithetic: false },
        basis: Default::default(),
        solver: Default::default(),
        output: Default::default(),
        refine: Default::default(),
    }
}

/// Read `path` (if any), apply `ov` and validate. Without a file the
/// fixture must come from `ov`; the scheme defaults to theta.
pub fn resolve(path: Option<&Path>, ov: &Overrides) -> Result<Validated, SchemaError> {
    let cwd = PathBuf::from(".");
    let (mut cfg, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| SchemaError(format!("{}: {e}", p.display())))?;
            (config::parse(&text)?, p.parent().map(Path::to_path_buf).unwrap_or(cwd.clone()))
        }
        None => {
            let name = ov
                .fixture
                .as_deref()
                .ok_or_else(|| SchemaError("give a config file or --fixture".into()))?;
            (bare_config(name, ov.scheme.unwrap_or(Scheme::Theta)), cwd.clone())
        }
    };
    if let Some(s) = ov.scheme {
        cfg.scheme = s;
    }
    if let Some(f) = &ov.fixture {
        if *f != cfg.fixture.name {
            cfg.fixture = FixtureConfig { name: f.clone(), params: FixtureParams::default() };
        }
    }
    if let Some(n) = ov.particles {
        cfg.ensemble.particles = n;
    }
    if let Some(m) = ov.steps {
        cfg.grid.steps = m;
    }
    if let Some(s) = ov.seed {
        cfg.ensemble.seed = s;
    }
    let mut v = config::validate(cfg, &base)?;
    if let Some(d) = &ov.out_dir {
        v.output_dir = d.clone();
    }
    Ok(v)
}

/// Constants of a fixture's certificates as JSON.
pub fn constants(path: Option<&Path>, fixture: Option<&str>, horizon: Option<f64>) -> Result<serde_json::Value, CliError> {
    let (name, params, h) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| SchemaError(format!("{}: {e}", p.display())))?;
            let cfg = config::parse(&text)?;
            if cfg.schema_version != SCHEMA_VERSION {
                return Err(SchemaError(format!("schema_version {} is not supported", cfg.schema_version)).into());
            }
            let name = fixture.map(str::to_string).unwrap_or(cfg.fixture.name.clone());
            let params = if name == cfg.fixture.name { cfg.fixture.params } else { FixtureParams::default() };
            (name, params, horizon.unwrap_or(cfg.grid.horizon))
        }
        None => {
            let name = fixture.ok_or_else(|| SchemaError("give a config file or --fixture".into()))?;
            (name.to_string(), FixtureParams::default(), horizon.unwrap_or(1.0))
        }
    };
    let f = mfbsde::generators::fixture(&name, &params, h).map_err(|e| SchemaError(e.to_string()))?;
    Ok(run::constants_json(&f, h))
}

fn diverged(v: &Validated, e: &mfbsde::Error) -> CliError {
    let trace = run::artifact_path(v, ".trace.json");
    let body = json!({
        "schema_version": SCHEMA_VERSION,
        "config": v.config,
        "error": e.to_string(),
    });
    match run::write_json(&trace, &body) {
        Ok(()) => CliError::Diverged { message: e.to_string(), trace },
        Err(w) => CliError::Other(w.context(format!("solver diverged ({e}) and the trace could not be written"))),
    }
}

fn solve_and_write(v: &Validated) -> Result<(run::RunResult, run::Artifacts), CliError> {
    let res = match run::execute(v) {
        Ok(r) => r,
        Err(e @ mfbsde::Error::Diverged(_)) => return Err(diverged(v, &e)),
        Err(e) => return Err(e.into()),
    };
    let art = run::write_outputs(v, &res)?;
    if !res.report.converged {
        return Err(CliError::Diverged {
            message: format!("no convergence after {} iterations", res.report.iterations),
            trace: art.report.clone(),
        });
    }
    Ok((res, art))
}

pub fn solve(v: &Validated) -> Result<run::Artifacts, CliError> {
    solve_and_write(v).map(|(_, a)| a)
}

pub struct VerifyOutcome {
    pub rows: Vec<verify::VerifyRow>,
    pub table: PathBuf,
    pub artifacts: run::Artifacts,
}

/// Solve, then compare against oracles and diagnostics. A solve that does
/// not converge is reported as a failed row rather than a divergence.
pub fn verify(v: &Validated) -> Result<VerifyOutcome, CliError> {
    let res = match run::execute(v) {
        Ok(r) => r,
        Err(e @ mfbsde::Error::Diverged(_)) => return Err(diverged(v, &e)),
        Err(e) => return Err(e.into()),
    };
    let artifacts = run::write_outputs(v, &res)?;
    let rows = verify::verify_rows(v, &res)?;
    let table = run::artifact_path(v, ".verify.json");
    run::write_json(&table, &json!({ "schema_version": SCHEMA_VERSION, "rows": rows }))?;
    Ok(VerifyOutcome { rows, table, artifacts })
}

pub struct RefineOutcome {
    pub report: refine::RefineReport,
    pub json: PathBuf,
    pub csv: PathBuf,
}

pub fn refine(v: &Validated) -> Result<RefineOutcome, CliError> {
    let report = match refine::refine(v) {
        Ok(r) => r,
        Err(e @ mfbsde::Error::Diverged(_)) => return Err(diverged(v, &e)),
        Err(e) => return Err(e.into()),
    };
    let json = run::artifact_path(v, ".refine.json");
    run::write_json(&json, &report)?;
    let csv = run::artifact_path(v, ".refine.csv");
    refine::write_refine_csv(&csv, &report)?;
    Ok(RefineOutcome { report, json, csv })
}
