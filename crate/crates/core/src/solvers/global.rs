use serde::Serialize;

use super::{psi_map, sup_diff_y, PicardTrace, Solution, SolverOptions};
use crate::condexp::Engine;
use crate::constants::{global_ode, ser_f64, GlobalConstants};
use crate::diagnostics::bmo_of_difference;
use crate::error::{Error, Result};
use crate::generators::{CertificateGlobal, GeneratorSpec};
use crate::paths::PathEnsemble;

const MAX_HALVINGS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowRecord {
    pub start: usize,
    pub end: usize,
    pub iterations: usize,
    pub halvings: usize,
    #[serde(serialize_with = "ser_f64")]
    pub final_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalReport {
    pub constants: GlobalConstants,
    /// Steps per window before any halving.
    pub nominal_steps: usize,
    /// Upper bound on the window count implied by `delta_kappa`.
    #[serde(serialize_with = "ser_f64")]
    pub window_bound: f64,
    /// Windows in backward order.
    pub windows: Vec<WindowRecord>,
    /// Largest `|Y|` jump between a window's start and the terminal handed
    /// to the next window.
    pub seam_mismatch: f64,
    pub converged: bool,
}

/// Backward stitching of local Picard solves over windows of length
/// `delta_kappa` (at least one step). A window that fails to converge is
/// halved, up to six times.
pub fn solve_global(
    spec: &GeneratorSpec,
    cert: &CertificateGlobal,
    paths: &PathEnsemble,
    engine: &Engine,
    terminal: &[f64],
    opts: &SolverOptions,
) -> Result<(Solution, GlobalReport)> {
    opts.validate()?;
    let (n, d) = (spec.n(), spec.d());
    let grid = *paths.grid();
    let m = grid.steps();
    let constants = global_ode(cert, n, grid.horizon())?;
    let nominal = if constants.delta_kappa.is_finite() && constants.delta_kappa > 0.0 {
        ((constants.delta_kappa / grid.dt()).floor() as usize).clamp(1, m)
    } else {
        1
    };
    let window_bound = (grid.horizon() / constants.delta_kappa).ceil() + MAX_HALVINGS as f64;
    let z_clip = opts.z_clip.unwrap_or(if constants.window.k2.is_finite() {
        4.0 * constants.window.k2.sqrt()
    } else {
        f64::INFINITY
    });

    let mut full = Solution::zeros(grid, paths.particles(), n, d, paths.seed());
    full.y_node_mut(m).copy_from_slice(terminal);
    let mut windows = Vec::new();
    let mut seam = 0.0f64;
    let mut end = m;
    while end > 0 {
        let end_values = full.y_node(end).to_vec();
        let mut steps = nominal.min(end);
        let mut halvings = 0;
        let (part, trace) = loop {
            let start = end - steps;
            match window_picard(spec, paths, engine, start, end, &end_values, opts, z_clip) {
                Ok((part, trace)) if trace.converged => break (part, trace),
                Ok(_) | Err(Error::NonFinite { .. }) if halvings < MAX_HALVINGS && steps > 1 => {
                    steps /= 2;
                    halvings += 1;
                }
                Ok((_, failed)) => {
                    return Err(Error::Diverged(format!(
                        "window ending at node {end} did not converge after {halvings} halvings (last difference {:.3e})",
                        failed.records.last().map_or(f64::NAN, |r| r.combined)
                    )))
                }
                Err(e) => return Err(e),
            }
        };
        let start = part.first_node();
        let jump = part
            .y_node(end)
            .iter()
            .zip(&end_values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        seam = seam.max(jump);
        full.paste(&part);
        windows.push(WindowRecord {
            start,
            end,
            iterations: trace.len(),
            halvings,
            final_difference: trace.records.last().map_or(f64::NAN, |r| r.combined),
        });
        end = start;
    }
    Ok((
        full,
        GlobalReport {
            constants,
            nominal_steps: nominal,
            window_bound,
            windows,
            seam_mismatch: seam,
            converged: true,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
fn window_picard(
    spec: &GeneratorSpec,
    paths: &PathEnsemble,
    engine: &Engine,
    start: usize,
    end: usize,
    end_values: &[f64],
    opts: &SolverOptions,
    z_clip: f64,
) -> Result<(Solution, PicardTrace)> {
    let grid = *paths.grid();
    let mut current = Solution::flat(grid, start, end, end_values, spec.n(), spec.d(), opts.init_offset, paths.seed())?;
    let mut trace = PicardTrace { z_clip, ..Default::default() };
    for it in 1..=opts.max_iter {
        let (next, clips) = psi_map(spec, paths, engine, end_values, &current, opts, z_clip)?;
        let sup_dy = sup_diff_y(&current, &next);
        let bmo_dz = bmo_of_difference(&next, &current, engine)?;
        let combined = sup_dy + bmo_dz;
        let prev = trace.records.last().map(|r| r.combined);
        trace.records.push(super::PicardRecord {
            iteration: it,
            sup_dy,
            bmo_dz,
            combined,
            ratio: prev.filter(|p| *p > 0.0).map(|p| combined / p),
            max_y: crate::diagnostics::max_norm_y(&next).0,
            bmo_z: f64::NAN,
            in_ball: None,
            clip_events: clips,
            exp_moments: Vec::new(),
        });
        current = next;
        if combined <= opts.tol {
            trace.converged = true;
            break;
        }
    }
    Ok((current, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condexp::RegressionBasis;
    use crate::generators::{fixture, FixtureParams};
    use crate::paths::{build_grid, sample_brownian};

    #[test]
    fn windows_tile_the_grid_and_seams_match() {
        let f = fixture("eq41", &FixtureParams::default(), 1.0).unwrap();
        let paths = sample_brownian(build_grid(1.0, 8).unwrap(), 1000, 2, 4).unwrap();
        let e = Engine::new(&paths, RegressionBasis::Polynomial { degree: 2 }).unwrap();
        let xi = f.terminal.sample(&paths).unwrap();
        let (sol, rep) = solve_global(&f.spec, f.certificates.global.as_ref().unwrap(), &paths, &e, &xi, &SolverOptions::default())
            .unwrap();
        assert_eq!(rep.windows.first().unwrap().end, 8);
        assert_eq!(rep.windows.last().unwrap().start, 0);
        for w in rep.windows.windows(2) {
            assert_eq!(w[0].start, w[1].end);
        }
        assert!(rep.windows.len() as f64 <= rep.window_bound);
        assert_eq!(rep.seam_mismatch, 0.0);
        assert_eq!(sol.y_node(8), xi.as_slice());
        assert!(sol.y_values().iter().all(|v| v.is_finite()));
    }
}
