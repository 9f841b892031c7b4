use super::{psi_map, record, PicardTrace, Solution, SolverOptions};
use crate::condexp::Engine;
use crate::constants::local_window;
use crate::error::{Error, Result};
use crate::generators::{CertificateLocal, GeneratorSpec};
use crate::paths::PathEnsemble;

/// Picard iteration of the frozen-input map on the whole grid of `paths`,
/// started from `(terminal + offset, 0)`.
///
/// With a certificate, `Z` rows are clipped at `4 sqrt(K2)` (unless
/// `opts.z_clip` overrides it) and each record says whether the iterate
/// stayed in the `(K1, K2)` ball. Runs that stop at `max_iter` with
/// differences still shrinking come back with `converged = false`; runs
/// whose differences stopped shrinking fail with [`Error::Diverged`].
pub fn solve_local(
    spec: &GeneratorSpec,
    cert: Option<&CertificateLocal>,
    paths: &PathEnsemble,
    engine: &Engine,
    terminal: &[f64],
    opts: &SolverOptions,
) -> Result<(Solution, PicardTrace)> {
    opts.validate()?;
    let n = spec.n();
    let radii = match cert {
        Some(c) => {
            let w = local_window(c, n)?;
            Some((w.k1, w.k2))
        }
        None => None,
    };
    let z_clip = opts
        .z_clip
        .unwrap_or_else(|| radii.map(|(_, k2)| 4.0 * k2.sqrt()).unwrap_or(f64::INFINITY));
    let grid = *paths.grid();
    let mut current = Solution::flat(grid, 0, grid.steps(), terminal, n, spec.d(), opts.init_offset, paths.seed())?;
    let mut trace = PicardTrace { z_clip, ..Default::default() };
    for it in 1..=opts.max_iter {
        let (next, clips) = psi_map(spec, paths, engine, terminal, &current, opts, z_clip)?;
        let rec = record(it, trace.records.last(), &current, &next, engine, radii, clips)?;
        let done = rec.combined <= opts.tol;
        trace.records.push(rec);
        current = next;
        if done {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged && opts.tol.is_finite() {
        let stalled = trace.records.last().and_then(|r| r.ratio).is_some_and(|r| r > 0.9);
        if stalled {
            return Err(Error::Diverged(format!(
                "no contraction after {} iterations (last difference {:.3e}); shorten the window",
                trace.len(),
                trace.records.last().map_or(f64::NAN, |r| r.combined)
            )));
        }
    }
    Ok((current, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condexp::RegressionBasis;
    use crate::generators::{fixture, FixtureParams, TerminalKind};
    use crate::paths::{build_grid, sample_brownian};

    fn sine_quadratic(eps: f64) -> (crate::generators::Fixture, PathEnsemble, Engine) {
        let p = FixtureParams { terminal: Some(TerminalKind::Sine), ..Default::default() };
        let f = fixture("pure_quadratic", &p, eps).unwrap();
        let paths = sample_brownian(build_grid(eps, 8).unwrap(), 2000, 1, 1).unwrap();
        let e = Engine::new(&paths, RegressionBasis::default()).unwrap();
        (f, paths, e)
    }

    #[test]
    fn driver_without_y_dependence_converges_in_two_steps() {
        let (f, paths, e) = sine_quadratic(0.05);
        let xi = f.terminal.sample(&paths).unwrap();
        let (sol, tr) = solve_local(&f.spec, f.certificates.local.as_ref(), &paths, &e, &xi, &SolverOptions::default()).unwrap();
        assert!(tr.converged);
        assert_eq!(tr.len(), 2);
        assert_eq!(tr.records[1].combined, 0.0);
        assert_eq!(sol.y_node(8), xi.as_slice());
        assert!(tr.records.iter().all(|r| r.in_ball == Some(true)));
    }

    #[test]
    fn infinite_tolerance_stops_after_one_map() {
        let (f, paths, e) = sine_quadratic(0.05);
        let xi = f.terminal.sample(&paths).unwrap();
        let opts = SolverOptions { tol: f64::INFINITY, ..Default::default() };
        let (_, tr) = solve_local(&f.spec, None, &paths, &e, &xi, &opts).unwrap();
        assert_eq!(tr.len(), 1);
        assert!(tr.z_clip.is_infinite());
    }

    #[test]
    fn y_coupled_driver_contracts() {
        let f = fixture("eq41", &FixtureParams::default(), 0.1).unwrap();
        let paths = sample_brownian(build_grid(0.1, 8).unwrap(), 2000, 2, 2).unwrap();
        let e = Engine::new(&paths, RegressionBasis::Polynomial { degree: 2 }).unwrap();
        let xi = f.terminal.sample(&paths).unwrap();
        let (_, tr) = solve_local(&f.spec, None, &paths, &e, &xi, &SolverOptions::default()).unwrap();
        assert!(tr.converged, "{:?}", tr.differences());
        let r = tr.records[2].ratio.unwrap();
        assert!(r < 0.5, "ratio {r}");
    }

    #[test]
    fn initial_offset_is_forgotten() {
        let f = fixture("eq41", &FixtureParams::default(), 0.1).unwrap();
        let paths = sample_brownian(build_grid(0.1, 4).unwrap(), 1000, 2, 3).unwrap();
        let e = Engine::new(&paths, RegressionBasis::Polynomial { degree: 2 }).unwrap();
        let xi = f.terminal.sample(&paths).unwrap();
        let opts = SolverOptions { tol: 1e-10, ..Default::default() };
        let (a, _) = solve_local(&f.spec, None, &paths, &e, &xi, &opts).unwrap();
        let (b, _) = solve_local(&f.spec, None, &paths, &e, &xi, &SolverOptions { init_offset: 1.0, ..opts }).unwrap();
        let diff = super::super::sup_diff_y(&a, &b);
        assert!(diff < 1e-8, "{diff}");
    }
}
