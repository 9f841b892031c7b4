use serde::Serialize;

use super::{solve_theta, PicardTrace, Solution, SolverOptions};
use crate::condexp::Engine;
use crate::constants::{ser_f64, volterra_weight};
use crate::error::{Error, Result};
use crate::generators::{CertificateConvex, CertificateVolterra, GeneratorSpec, VolterraKernel};
use crate::measures::{MeasureView, ParticleCloud};
use crate::paths::PathEnsemble;

const RATIO_LIMIT: f64 = 0.5;
const RATIO_PATIENCE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolterraRecord {
    pub iteration: usize,
    pub sup_dy: f64,
    /// `log sup_t e^{beta t} |Y_new - Y_old|^2`.
    #[serde(serialize_with = "ser_f64")]
    pub log_weighted: f64,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolterraTrace {
    pub beta: f64,
    pub records: Vec<VolterraRecord>,
    pub converged: bool,
    /// Trace of the inner solve without the kernel term.
    pub inner: PicardTrace,
}

/// Outer fixed point `Y = Y' + A(g(Y))`, where `Y'` solves the BSDE without
/// the kernel and `A_k = E_k[sum_{m > k} g_m dt]`. `Z` is the inner one.
#[allow(clippy::too_many_arguments)]
pub fn solve_volterra(
    spec: &GeneratorSpec,
    kernel: &VolterraKernel,
    vcert: Option<&CertificateVolterra>,
    convex: Option<&CertificateConvex>,
    paths: &PathEnsemble,
    engine: &Engine,
    terminal: &[f64],
    opts: &SolverOptions,
) -> Result<(Solution, VolterraTrace)> {
    let (base, inner) = solve_theta(spec, convex, paths, engine, terminal, &SolverOptions { init_offset: 0.0, ..*opts })?;
    let grid = *paths.grid();
    let (m, dt, n, np) = (grid.steps(), grid.dt(), spec.n(), paths.particles());
    let beta = volterra_weight(vcert.map_or(0.0, |c| c.c), grid.horizon());

    let mut current = base.clone();
    for k in 0..=m {
        current.y_node_mut(k).iter_mut().for_each(|v| *v = opts.init_offset);
    }
    let mut records: Vec<VolterraRecord> = Vec::new();
    let mut converged = false;
    let mut g = vec![0.0; np * n];
    let mut a_next = vec![0.0; np * n];
    let mut a_now = vec![0.0; np * n];
    let mut col = vec![0.0; np];
    let mut fit = vec![0.0; np];
    let mut over_limit = 0;
    for it in 1..=opts.max_iter {
        let mut next = base.clone();
        a_next.fill(0.0);
        for k in (0..m).rev() {
            let law = MeasureView::from_y(ParticleCloud::new(n, current.y_node(k + 1).to_vec())?)?;
            for j in 0..np {
                (kernel.eval)(k + 1, j, &current, &law, &mut g[j * n..(j + 1) * n]);
            }
            let proj = engine.node(k)?;
            for i in 0..n {
                for j in 0..np {
                    col[j] = g[j * n + i] * dt + a_next[j * n + i];
                }
                proj.project_into(&col, &mut fit)?;
                for j in 0..np {
                    a_now[j * n + i] = fit[j];
                }
            }
            for (j, (y, a)) in next.y_node_mut(k).iter_mut().zip(&a_now).enumerate() {
                if *a != 0.0 {
                    *y += a;
                }
                if !y.is_finite() {
                    return Err(Error::NonFinite { node: k, component: j % n, particle: j / n });
                }
            }
            std::mem::swap(&mut a_now, &mut a_next);
        }

        let mut sup_dy = 0.0f64;
        let mut log_weighted = f64::NEG_INFINITY;
        for k in 0..=m {
            let node_max = next
                .y_node(k)
                .iter()
                .zip(current.y_node(k))
                .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
            sup_dy = sup_dy.max(node_max);
            if node_max > 0.0 {
                log_weighted = log_weighted.max(beta * grid.time(k) + 2.0 * node_max.ln());
            }
        }
        let ratio = records
            .last()
            .filter(|r| r.log_weighted.is_finite() && log_weighted.is_finite())
            .map(|r| (log_weighted - r.log_weighted).exp());
        records.push(VolterraRecord { iteration: it, sup_dy, log_weighted, ratio });
        current = next;
        if sup_dy <= opts.tol || log_weighted <= opts.tol.ln() {
            converged = true;
            break;
        }
        if it >= 2 && ratio.is_some_and(|r| r > RATIO_LIMIT) {
            over_limit += 1;
            if over_limit >= RATIO_PATIENCE {
                return Err(Error::Diverged(format!(
                    "weighted differences contracted by more than {RATIO_LIMIT} for {RATIO_PATIENCE} iterations"
                )));
            }
        } else {
            over_limit = 0;
        }
    }
    Ok((current, VolterraTrace { beta, records, converged, inner }))
}
