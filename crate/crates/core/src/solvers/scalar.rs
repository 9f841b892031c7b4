use crate::condexp::Engine;
use crate::error::{Error, Result};
use crate::paths::PathEnsemble;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarOptions {
    /// Row-norm cap applied to `Z` before it reaches the driver.
    pub z_clip: f64,
    /// Extra projections of each `Y_k` after the first (1 = none).
    pub inner_sweeps: usize,
    /// Weight of the current node in the driver quadrature.
    pub time_theta: f64,
}

impl Default for ScalarOptions {
    fn default() -> Self {
        ScalarOptions {
            z_clip: f64::INFINITY,
            inner_sweeps: 1,
            time_theta: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarOutput {
    /// `(nodes + 1) x N`.
    pub y: Vec<f64>,
    /// `nodes x N x d`.
    pub z: Vec<f64>,
    pub clip_events: usize,
}

/// Backward regression scheme for a scalar BSDE on the whole grid of
/// `paths`. `driver(k, j, z)` is the generator at node `k` for particle `j`;
/// `terminal` has one value per particle.
pub fn solve_scalar(
    paths: &PathEnsemble,
    engine: &Engine,
    driver: &mut dyn FnMut(usize, usize, &[f64]) -> f64,
    terminal: &[f64],
    opts: &ScalarOptions,
) -> Result<ScalarOutput> {
    solve_range(paths, engine, 0, paths.grid().steps(), 0, driver, terminal, opts)
}

fn clip(row: &mut [f64], radius: f64) -> bool {
    if !radius.is_finite() {
        return false;
    }
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > radius {
        let s = radius / norm;
        row.iter_mut().for_each(|v| *v *= s);
        return true;
    }
    false
}

/// Same scheme on the nodes `k0..=k1`; `component` only labels errors.
#[allow(clippy::too_many_arguments)]
pub(crate) fn solve_range(
    paths: &PathEnsemble,
    engine: &Engine,
    k0: usize,
    k1: usize,
    component: usize,
    driver: &mut dyn FnMut(usize, usize, &[f64]) -> f64,
    terminal: &[f64],
    opts: &ScalarOptions,
) -> Result<ScalarOutput> {
    let np = paths.particles();
    let d = paths.dim();
    let grid = paths.grid();
    if k0 >= k1 || k1 > grid.steps() {
        return Err(Error::InvalidArgument(format!("bad node range {k0}..={k1}")));
    }
    if terminal.len() != np {
        return Err(Error::ShapeMismatch(format!("terminal has {} values for {np} particles", terminal.len())));
    }
    if let Some(j) = terminal.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { node: k1, component, particle: j });
    }
    let dt = grid.dt();
    let nodes = k1 - k0;
    let theta = opts.time_theta;
    let mut y = vec![0.0; (nodes + 1) * np];
    let mut z = vec![0.0; nodes * np * d];
    y[nodes * np..].copy_from_slice(terminal);
    let mut clips = 0usize;
    let mut row = vec![0.0; d];
    let mut f_next: Option<Vec<f64>> = None;
    let mut f_now = vec![0.0; np];
    let mut rhs = vec![0.0; np];
    let mut fit = vec![0.0; np];
    let mut centered = vec![0.0; np];

    for k in (k0..k1).rev() {
        let local = k - k0;
        let proj = engine.node(k)?;
        let y_next = &y[(local + 1) * np..(local + 2) * np];
        // E_k[P_k(Y) dW] = 0, so centering only removes variance
        proj.project_into(y_next, &mut fit)?;
        for j in 0..np {
            centered[j] = y_next[j] - fit[j];
        }
        let zk = proj.project_increment(&centered, paths.increment(k)?, dt)?;
        if let Some(j) = zk.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node: k, component, particle: j / d });
        }
        z[local * np * d..(local + 1) * np * d].copy_from_slice(&zk);

        let mut eval_at = |node: usize, out: &mut [f64], clips: &mut usize| {
            for j in 0..np {
                row.copy_from_slice(&zk[j * d..(j + 1) * d]);
                *clips += clip(&mut row, opts.z_clip) as usize;
                out[j] = driver(node, j, &row);
            }
        };
        // the right end of the window has no Z of its own; reuse Z_{k1-1}
        if f_next.is_none() && theta < 1.0 {
            let mut f = vec![0.0; np];
            eval_at(k + 1, &mut f, &mut clips);
            f_next = Some(f);
        }
        eval_at(k, &mut f_now, &mut clips);

        for j in 0..np {
            let explicit = match &f_next {
                Some(f) if theta < 1.0 => (1.0 - theta) * dt * f[j],
                _ => 0.0,
            };
            rhs[j] = y_next[j] + explicit;
        }
        proj.project_into(&rhs, &mut fit)?;
        for _ in 1..opts.inner_sweeps {
            rhs.copy_from_slice(&fit);
            proj.project_into(&rhs, &mut fit)?;
        }
        let yk = &mut y[local * np..(local + 1) * np];
        for j in 0..np {
            yk[j] = fit[j] + theta * dt * f_now[j];
            if !yk[j].is_finite() {
                return Err(Error::NonFinite { node: k, component, particle: j });
            }
        }
        match &mut f_next {
            Some(f) => f.copy_from_slice(&f_now),
            None => f_next = Some(f_now.clone()),
        }
    }
    Ok(ScalarOutput { y, z, clip_events: clips })
}
