use super::{psi_map, record, PicardTrace, Solution, SolverOptions};
use crate::condexp::Engine;
use crate::error::{Error, Result};
use crate::generators::{CertificateConvex, GeneratorSpec};
use crate::measures::exp_moment;
use crate::paths::PathEnsemble;

/// Picard iteration on the whole horizon for convex or concave drivers,
/// started from `Y = offset`, `Z = 0`. Stops once `sup |Y_new - Y_old| <= tol`.
///
/// Each record carries `E exp(q gamma sup_t |Y_t|)` for `q = 1, 2`, with
/// `gamma` from the certificate (1 without one).
pub fn solve_theta(
    spec: &GeneratorSpec,
    cert: Option<&CertificateConvex>,
    paths: &PathEnsemble,
    engine: &Engine,
    terminal: &[f64],
    opts: &SolverOptions,
) -> Result<(Solution, PicardTrace)> {
    opts.validate()?;
    let (n, d) = (spec.n(), spec.d());
    let gamma = cert.map_or(1.0, |c| c.gamma);
    let z_clip = opts.z_clip.unwrap_or(f64::INFINITY);
    let grid = *paths.grid();
    let zeros = vec![0.0; terminal.len()];
    let mut current = Solution::flat(grid, 0, grid.steps(), &zeros, n, d, opts.init_offset, paths.seed())?;
    let mut trace = PicardTrace { z_clip, ..Default::default() };
    let np = paths.particles();
    let mut sup_y = vec![0.0f64; np];
    for it in 1..=opts.max_iter {
        let (next, clips) = psi_map(spec, paths, engine, terminal, &current, opts, z_clip)?;
        let mut rec = record(it, trace.records.last(), &current, &next, engine, None, clips)?;
        sup_y.fill(0.0);
        for k in 0..=grid.steps() {
            for (j, s) in sup_y.iter_mut().enumerate() {
                let norm = next.y_of(k, j).iter().map(|v| v * v).sum::<f64>().sqrt();
                *s = s.max(gamma * norm);
            }
        }
        rec.exp_moments = vec![exp_moment(&sup_y, 1.0)?, exp_moment(&sup_y, 2.0)?];
        let done = rec.sup_dy <= opts.tol;
        trace.records.push(rec);
        current = next;
        if done {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged && opts.tol.is_finite() {
        let growing = trace.records.iter().rev().take(3).all(|r| r.ratio.is_some_and(|q| q > 1.0));
        if growing && trace.len() >= 3 {
            return Err(Error::Diverged(format!(
                "differences grew for three iterations (last {:.3e})",
                trace.records.last().map_or(f64::NAN, |r| r.combined)
            )));
        }
    }
    Ok((current, trace))
}
