use std::path::Path;

use mfbsde::condexp::Engine;
use mfbsde::solvers::solve_fixture;
use serde::Serialize;

use crate::config::{RunConfig, Validated, SCHEMA_VERSION};
use crate::run::ensemble;
use crate::verify::oracle_y0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineRow {
    pub steps: usize,
    pub dt: f64,
    pub y0: Vec<f64>,
    pub converged: bool,
    /// `|y0 - oracle|` on the first component, when an oracle exists.
    pub oracle_error: Option<f64>,
    /// `|y0 - y0 of the next finer level|` on the first component.
    pub step_change: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RefineReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub oracle: Option<Vec<f64>>,
    pub rows: Vec<RefineRow>,
}

/// Grid study on nested grids: one fine ensemble, coarsened per level, so
/// every level sees the same Brownian paths.
pub fn refine(v: &Validated) -> mfbsde::Result<RefineReport> {
    let cfg = &v.config;
    let mut levels = cfg.refine.levels.clone();
    levels.sort_unstable();
    levels.dedup();
    let finest = *levels.last().expect("validated levels are nonempty");
    let fine = ensemble(v, finest)?;
    let oracle = oracle_y0(&v.fixture, v.solve_horizon);
    let mut rows = Vec::new();
    for &steps in &levels {
        let paths = fine.coarsen(finest / steps)?;
        let engine = Engine::new(&paths, cfg.basis)?;
        let (sol, trace) = solve_fixture(&v.fixture, cfg.scheme, &paths, &engine, &cfg.solver)?;
        let y0 = sol.y_start_mean();
        rows.push(RefineRow {
            steps,
            dt: paths.grid().dt(),
            oracle_error: oracle.as_ref().map(|o| (y0[0] - o[0]).abs()),
            y0,
            converged: trace.converged(),
            step_change: None,
        });
    }
    for i in 0..rows.len().saturating_sub(1) {
        rows[i].step_change = Some((rows[i].y0[0] - rows[i + 1].y0[0]).abs());
    }
    Ok(RefineReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        oracle,
        rows,
    })
}

/// Columns `steps, dt, y0, converged, oracle_error, step_change`; empty
/// cells where a value does not exist.
pub fn write_refine_csv(path: &Path, report: &RefineReport) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["steps", "dt", "y0", "converged", "oracle_error", "step_change"])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in &report.rows {
        w.write_record([
            r.steps.to_string(),
            r.dt.to_string(),
            r.y0[0].to_string(),
            r.converged.to_string(),
            opt(r.oracle_error),
            opt(r.step_change),
        ])?;
    }
    w.flush()?;
    Ok(())
}
