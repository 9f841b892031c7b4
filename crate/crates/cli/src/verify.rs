use mfbsde::generators::{Fixture, TerminalKind};
use mfbsde::oracles::{cole_hopf, linear_mf_oracle, AffineTerminal, ColeHopfMethod};
use serde::Serialize;

use crate::config::Validated;
use crate::run::{pathwise, standard_error, RunResult};

/// Relative part of the oracle tolerance on `Y_0`.
pub const ORACLE_REL_TOL: f64 = 0.02;
/// Allowed RMS error of `Z` against a closed form.
pub const Z_RMS_TOL: f64 = 0.05;
const ORACLE_MC_SAMPLES: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
    Skipped,
}

impl Status {
    pub fn label(&self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::NotApplicable => "not applicable",
            Status::Skipped => "skipped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyRow {
    pub check: String,
    pub kind: &'static str,
    pub expected: Option<f64>,
    pub observed: Option<f64>,
    pub tolerance: Option<f64>,
    pub status: Status,
    pub note: Option<String>,
}

impl VerifyRow {
    fn oracle(check: String, expected: f64, observed: f64, tolerance: f64) -> Self {
        let ok = (expected - observed).abs() <= tolerance;
        VerifyRow {
            check,
            kind: "oracle",
            expected: Some(expected),
            observed: Some(observed),
            tolerance: Some(tolerance),
            status: if ok { Status::Pass } else { Status::Fail },
            note: None,
        }
    }

    fn missing(check: &str, kind: &'static str, status: Status, note: String) -> Self {
        VerifyRow {
            check: check.into(),
            kind,
            expected: None,
            observed: None,
            tolerance: None,
            status,
            note: Some(note),
        }
    }
}

fn terminal_fn(fixture: &Fixture) -> impl Fn(f64) -> f64 {
    let t = fixture.terminal;
    move |w| {
        let mut out = [0.0];
        t.eval(&[w; 1], &mut out);
        out[0]
    }
}

/// Reference values of `Y_0`, one per component, if the fixture has a closed form.
pub fn oracle_y0(fixture: &Fixture, horizon: f64) -> Option<Vec<f64>> {
    let p = &fixture.params;
    let n = fixture.spec.n();
    match fixture.name.as_str() {
        "pure_quadratic" => {
            let g = terminal_fn(fixture);
            let gamma = p.gamma.unwrap_or(1.0);
            let r = cole_hopf(&g, gamma, horizon, ColeHopfMethod::GaussHermite, 0, 0).ok()?;
            Some(vec![r.y0; n])
        }
        "linear_mf" => {
            let o = linear_mf_oracle(p.a?, p.b?, affine(fixture)?, horizon);
            Some(vec![o.result().y0])
        }
        _ => None,
    }
}

fn affine(fixture: &Fixture) -> Option<AffineTerminal> {
    match fixture.terminal.kind {
        TerminalKind::Constant => Some(AffineTerminal { c: fixture.terminal.c, s: 0.0 }),
        TerminalKind::Brownian => Some(AffineTerminal { c: 0.0, s: 1.0 }),
        _ => None,
    }
}

fn oracle_rows(v: &Validated, res: &RunResult) -> anyhow::Result<Vec<VerifyRow>> {
    let fixture = &v.fixture;
    let horizon = v.solve_horizon;
    let Some(want) = oracle_y0(fixture, horizon) else {
        return Ok(vec![VerifyRow::missing(
            "oracle",
            "oracle",
            Status::NotApplicable,
            format!("no closed form for fixture {}", fixture.name),
        )]);
    };
    let sol = &res.solution;
    let mut rows = Vec::new();
    for (i, w) in want.iter().enumerate() {
        let se = standard_error(&pathwise(sol, &res.paths, i)?);
        let tol = ORACLE_REL_TOL * w.abs() + 3.0 * se;
        rows.push(VerifyRow::oracle(format!("y0[{i}]"), *w, res.report.y0[i], tol));
    }
    if fixture.name == "pure_quadratic" {
        let g = terminal_fn(fixture);
        let gamma = fixture.params.gamma.unwrap_or(1.0);
        let seed = v.config.ensemble.seed;
        let row = match cole_hopf(&g, gamma, horizon, ColeHopfMethod::MonteCarlo, ORACLE_MC_SAMPLES, seed) {
            Ok(mc) => VerifyRow::oracle("oracle_cross_check".into(), want[0], mc.y0, 3.0 * mc.error_bar + 1e-12),
            Err(e) => VerifyRow::missing("oracle_cross_check", "oracle", Status::Skipped, e.to_string()),
        };
        rows.push(row);
    }
    if fixture.name == "linear_mf" {
        let p = &fixture.params;
        if let (Some(a), Some(b), Some(term)) = (p.a, p.b, affine(fixture)) {
            let o = linear_mf_oracle(a, b, term, horizon);
            let g = sol.grid();
            let mut acc = 0.0;
            let mut count = 0usize;
            for k in sol.first_node()..sol.last_node() {
                let z = o.z_at(g.time(k));
                acc += sol.z_node(k).iter().map(|v| (v - z).powi(2)).sum::<f64>();
                count += sol.z_node(k).len();
            }
            let rms = (acc / count.max(1) as f64).sqrt();
            rows.push(VerifyRow::oracle("z_rms".into(), 0.0, rms, Z_RMS_TOL));
        }
    }
    Ok(rows)
}

fn diagnostic_rows(res: &RunResult) -> Vec<VerifyRow> {
    let mut rows = vec![VerifyRow {
        check: "converged".into(),
        kind: "diagnostic",
        expected: None,
        observed: Some(res.report.iterations as f64),
        tolerance: None,
        status: if res.report.converged { Status::Pass } else { Status::Fail },
        note: None,
    }];
    for b in &res.report.bounds {
        let (status, note) = if b.skipped {
            (Status::Skipped, b.note.clone())
        } else if b.satisfied {
            (Status::Pass, None)
        } else {
            (Status::Fail, b.location.map(|l| format!("node {} particle {} component {}", l.node, l.particle, l.component)))
        };
        let name = match b.location {
            Some(l) if b.name == "martingale_surrogate" => format!("{}[{}]", b.name, l.component),
            _ => b.name.clone(),
        };
        rows.push(VerifyRow {
            check: name,
            kind: "diagnostic",
            expected: Some(b.bound * (1.0 + b.slack)).filter(|x| x.is_finite()),
            observed: Some(b.observed).filter(|x| x.is_finite()),
            tolerance: None,
            status,
            note,
        });
    }
    rows
}

/// Oracle rows first, then every diagnostic of the run.
pub fn verify_rows(v: &Validated, res: &RunResult) -> anyhow::Result<Vec<VerifyRow>> {
    let mut rows = oracle_rows(v, res)?;
    rows.extend(diagnostic_rows(res));
    Ok(rows)
}

pub fn failures(rows: &[VerifyRow]) -> usize {
    rows.iter().filter(|r| r.status == Status::Fail).count()
}

fn cell(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.6e}"))
}

pub fn render_table(rows: &[VerifyRow]) -> String {
    let width = rows.iter().map(|r| r.check.len()).max().unwrap_or(5).max(5);
    let mut s = format!(
        "{:<width$}  {:<10}  {:>13}  {:>13}  {:>13}  status\n",
        "check", "kind", "expected", "observed", "tolerance"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<width$}  {:<10}  {:>13}  {:>13}  {:>13}  {}",
            r.check,
            r.kind,
            cell(r.expected),
            cell(r.observed),
            cell(r.tolerance),
            r.status.label()
        ));
        if let Some(n) = &r.note {
            s.push_str(&format!("  ({n})"));
        }
        s.push('\n');
    }
    s
}
