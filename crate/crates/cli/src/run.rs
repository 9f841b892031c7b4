use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mfbsde::condexp::Engine;
use mfbsde::constants::{global_ode, local_window, theta_consts, volterra_weight};
use mfbsde::diagnostics::{
    bmo_norm, bmo_profile, check_apriori_local, check_envelope, john_nirenberg, martingale_surrogate, max_norm_y,
    BoundReport, InputNorms, MC_SLACK,
};
use mfbsde::generators::{Fixture, FixtureParams};
use mfbsde::paths::{build_grid, sample_brownian, sample_brownian_antithetic, PathEnsemble};
use mfbsde::solvers::{solve_fixture, Scheme, SchemeTrace, Solution};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{RunConfig, Validated, SCHEMA_VERSION};

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub paths_ms: f64,
    pub regression_ms: f64,
    pub solve_ms: f64,
    pub diagnostics_ms: f64,
}

/// Everything in the JSON report. Only `timings` varies between identical runs.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub fixture: FixtureParams,
    pub solve_horizon: f64,
    pub y0: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub constants: Value,
    pub trace: SchemeTrace,
    pub bounds: Vec<BoundReport>,
    pub clip_events: usize,
    pub ridge_fallbacks: usize,
    pub timings: Timings,
}

pub struct RunResult {
    pub paths: PathEnsemble,
    pub engine: Engine,
    pub solution: Solution,
    pub report: RunReport,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Brownian ensemble of the run on `steps` steps.
pub fn ensemble(v: &Validated, steps: usize) -> mfbsde::Result<PathEnsemble> {
    let e = &v.config.ensemble;
    let grid = build_grid(v.solve_horizon, steps)?;
    let d = v.fixture.spec.d();
    if e.antithetic {
        sample_brownian_antithetic(grid, e.particles, d, e.seed)
    } else {
        sample_brownian(grid, e.particles, d, e.seed)
    }
}

/// Every constant the fixture's certificates determine on `horizon`.
pub fn constants_json(fixture: &Fixture, horizon: f64) -> Value {
    let n = fixture.spec.n();
    let c = &fixture.certificates;
    let err = |e: mfbsde::Error| json!({ "error": e.to_string() });
    let local = c.local.as_ref().map(|cert| match local_window(cert, n) {
        Ok(w) => json!(w),
        Err(e) => err(e),
    });
    let global = c.global.as_ref().map(|cert| match global_ode(cert, n, horizon) {
        Ok(g) => {
            let mut v = json!(g);
            v["eta_0"] = json!(g.eta(0.0));
            v
        }
        Err(e) => err(e),
    });
    let theta = c.convex.as_ref().map(|cert| match theta_consts(cert, n, horizon, 2.0) {
        Ok(t) => json!(t),
        Err(e) => err(e),
    });
    let volterra = c
        .volterra
        .as_ref()
        .map(|cert| json!({ "c": cert.c, "beta": volterra_weight(cert.c, horizon) }));
    json!({
        "fixture": fixture.name,
        "horizon": horizon,
        "n": n,
        "d": fixture.spec.d(),
        "local": local,
        "global": global,
        "theta": theta,
        "volterra": volterra,
    })
}

fn iterations(trace: &SchemeTrace) -> usize {
    match trace {
        SchemeTrace::Picard(t) => t.len(),
        SchemeTrace::Global(r) => r.windows.iter().map(|w| w.iterations).sum(),
        SchemeTrace::Volterra(t) => t.records.len(),
    }
}

fn clip_events(trace: &SchemeTrace) -> usize {
    match trace {
        SchemeTrace::Picard(t) => t.clip_events(),
        SchemeTrace::Global(_) => 0,
        SchemeTrace::Volterra(t) => t.inner.clip_events(),
    }
}

fn bounds(v: &Validated, sol: &Solution, paths: &PathEnsemble, engine: &Engine, trace: &SchemeTrace) -> mfbsde::Result<Vec<BoundReport>> {
    let mut out = martingale_surrogate(sol, paths)?;
    out.push(john_nirenberg(sol, engine)?);
    match (v.config.scheme, trace) {
        (Scheme::Local, SchemeTrace::Picard(t)) => {
            if let Some(cert) = &v.fixture.certificates.local {
                let consts = local_window(cert, v.fixture.spec.n())?;
                let inputs = InputNorms { u_sup: max_norm_y(sol).0, v_bmo: bmo_norm(sol, engine)? };
                out.extend(check_apriori_local(sol, engine, cert, &consts, inputs)?);
                let worst_y = t.records.iter().map(|r| r.max_y).fold(0.0, f64::max);
                let worst_z = t.records.iter().map(|r| r.bmo_z * r.bmo_z).fold(0.0, f64::max);
                out.push(BoundReport::new("ball_sup_y", consts.k1, worst_y, MC_SLACK));
                out.push(BoundReport::new("ball_bmo_z", consts.k2, worst_z, MC_SLACK));
            }
        }
        (Scheme::Global, SchemeTrace::Global(r)) => out.extend(check_envelope(sol, &r.constants)),
        _ => {}
    }
    Ok(out)
}

/// Solve the configured problem and collect the report.
pub fn execute(v: &Validated) -> mfbsde::Result<RunResult> {
    let cfg = &v.config;
    let mut timings = Timings::default();
    let t = Instant::now();
    let paths = ensemble(v, cfg.grid.steps)?;
    timings.paths_ms = ms(t);
    let t = Instant::now();
    let engine = Engine::new(&paths, cfg.basis)?;
    timings.regression_ms = ms(t);
    let t = Instant::now();
    let (solution, trace) = solve_fixture(&v.fixture, cfg.scheme, &paths, &engine, &cfg.solver)?;
    timings.solve_ms = ms(t);
    let t = Instant::now();
    let bounds = bounds(v, &solution, &paths, &engine, &trace)?;
    timings.diagnostics_ms = ms(t);
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        fixture: v.fixture.params.clone(),
        solve_horizon: v.solve_horizon,
        y0: solution.y_start_mean(),
        converged: trace.converged(),
        iterations: iterations(&trace),
        constants: constants_json(&v.fixture, cfg.grid.horizon),
        clip_events: clip_events(&trace),
        ridge_fallbacks: engine.ridge_fallbacks(),
        trace,
        bounds,
        timings,
    };
    Ok(RunResult { paths, engine, solution, report })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub report: PathBuf,
    pub summary: PathBuf,
    pub dump: Option<PathBuf>,
}

pub fn artifact_path(v: &Validated, suffix: &str) -> PathBuf {
    v.output_dir.join(format!("{}{suffix}", v.config.output.stem))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Per-node summary: `t, mean_abs_y_<i>..., max_abs_y, bmo`.
pub fn write_summary(path: &Path, sol: &Solution, engine: &Engine) -> anyhow::Result<()> {
    let profile = bmo_profile(sol, engine)?;
    let mut w = csv::Writer::from_path(path)?;
    let n = sol.n();
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("mean_abs_y_{i}")));
    header.extend(["max_abs_y".to_string(), "bmo".to_string()]);
    w.write_record(&header)?;
    for (idx, k) in (sol.first_node()..=sol.last_node()).enumerate() {
        let y = sol.y_node(k);
        let np = sol.particles() as f64;
        let mut row = vec![sol.grid().time(k).to_string()];
        for i in 0..n {
            row.push((y.iter().skip(i).step_by(n).map(|v| v.abs()).sum::<f64>() / np).to_string());
        }
        let max = (0..sol.particles())
            .map(|j| sol.y_of(k, j).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        row.push(max.to_string());
        row.push(profile[idx].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_outputs(v: &Validated, res: &RunResult) -> anyhow::Result<Artifacts> {
    std::fs::create_dir_all(&v.output_dir)?;
    let report = artifact_path(v, ".json");
    write_json(&report, &res.report)?;
    let summary = artifact_path(v, ".csv");
    write_summary(&summary, &res.solution, &res.engine)?;
    let dump = if v.config.output.dump {
        let p = artifact_path(v, ".bin");
        res.solution.dump(BufWriter::new(File::create(&p)?))?;
        Some(p)
    } else {
        None
    };
    Ok(Artifacts { report, summary, dump })
}

/// `Y_0^i + sum_k Z_k^i . dW_k` per particle; its mean estimates `E xi^i + int E f^i`.
pub fn pathwise(sol: &Solution, paths: &PathEnsemble, i: usize) -> mfbsde::Result<Vec<f64>> {
    let (n, d) = (sol.n(), sol.d());
    let k0 = sol.first_node();
    let mut out: Vec<f64> = (0..sol.particles()).map(|j| sol.y_of(k0, j)[i]).collect();
    for k in k0..sol.last_node() {
        let (zk, dw) = (sol.z_node(k), paths.increment(k)?);
        for (j, p) in out.iter_mut().enumerate() {
            let row = &zk[(j * n + i) * d..(j * n + i + 1) * d];
            *p += row.iter().zip(&dw[j * d..(j + 1) * d]).map(|(z, w)| z * w).sum::<f64>();
        }
    }
    Ok(out)
}

/// Standard error of the sample mean, treating particles as independent.
pub fn standard_error(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}
