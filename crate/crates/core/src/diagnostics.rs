//! Runtime checks of bounds and proof-shaped quantities on computed solutions.

use serde::Serialize;

use crate::condexp::Engine;
use crate::constants::{ser_f64, GlobalConstants, LocalConstants};
use crate::error::{Error, Result};
use crate::generators::CertificateLocal;
use crate::measures::{exp_moment, ExpMoment};
use crate::paths::PathEnsemble;
use crate::solvers::{PicardTrace, Solution};

/// Slack applied to Monte Carlo comparisons.
pub const MC_SLACK: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Location {
    pub node: usize,
    pub particle: usize,
    pub component: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub name: String,
    #[serde(serialize_with = "ser_f64")]
    pub bound: f64,
    #[serde(serialize_with = "ser_f64")]
    pub observed: f64,
    pub slack: f64,
    pub satisfied: bool,
    /// Worst offender when the check is pointwise.
    pub location: Option<Location>,
    pub skipped: bool,
    pub note: Option<String>,
}

impl BoundReport {
    pub fn new(name: &str, bound: f64, observed: f64, slack: f64) -> Self {
        BoundReport {
            name: name.into(),
            bound,
            observed,
            slack,
            satisfied: observed <= bound * (1.0 + slack),
            location: None,
            skipped: false,
            note: None,
        }
    }

    fn at(mut self, loc: Location) -> Self {
        self.location = Some(loc);
        self
    }

    fn skipped(name: &str, note: String) -> Self {
        BoundReport {
            name: name.into(),
            bound: f64::NAN,
            observed: f64::NAN,
            slack: 0.0,
            satisfied: true,
            location: None,
            skipped: true,
            note: Some(note),
        }
    }
}

/// `max_j E_k[sum_{m >= k} sq(m, j) dt]` for every node `k` of the window
/// of `sol` (0 at the last node).
fn remaining_qv_profile(sol: &Solution, engine: &Engine, sq: impl Fn(usize, usize) -> f64) -> Result<Vec<f64>> {
    let (k0, k1, np) = (sol.first_node(), sol.last_node(), sol.particles());
    let dt = sol.grid().dt();
    let mut acc = vec![0.0; np];
    let mut fit = vec![0.0; np];
    let mut out = vec![0.0; k1 - k0 + 1];
    for k in (k0..k1).rev() {
        for (j, a) in acc.iter_mut().enumerate() {
            *a += sq(k, j) * dt;
        }
        engine.node(k)?.project_into(&acc, &mut fit)?;
        out[k - k0] = fit.iter().fold(0.0f64, |m, v| m.max(*v));
    }
    Ok(out)
}

fn remaining_qv_max(sol: &Solution, engine: &Engine, sq: impl Fn(usize, usize) -> f64) -> Result<f64> {
    Ok(remaining_qv_profile(sol, engine, sq)?.into_iter().fold(0.0, f64::max))
}

fn z_sq(sol: &Solution, k: usize, j: usize) -> f64 {
    let w = sol.n() * sol.d();
    sol.z_node(k)[j * w..(j + 1) * w].iter().map(|v| v * v).sum()
}

/// Grid-node surrogate of the BMO norm of `Z . W`: the square root of the
/// largest regressed remaining quadratic variation.
pub fn bmo_norm(sol: &Solution, engine: &Engine) -> Result<f64> {
    Ok(remaining_qv_max(sol, engine, |k, j| z_sq(sol, k, j))?.max(0.0).sqrt())
}

/// Per-node version of [`bmo_norm`]: entry `k` only looks at times `>= t_k`.
pub fn bmo_profile(sol: &Solution, engine: &Engine) -> Result<Vec<f64>> {
    Ok(remaining_qv_profile(sol, engine, |k, j| z_sq(sol, k, j))?
        .into_iter()
        .map(|v| v.max(0.0).sqrt())
        .collect())
}

/// [`bmo_norm`] of `a.Z - b.Z` on a common window.
pub fn bmo_of_difference(a: &Solution, b: &Solution, engine: &Engine) -> Result<f64> {
    if a.first_node() != b.first_node() || a.last_node() != b.last_node() || a.z_values().len() != b.z_values().len() {
        return Err(Error::ShapeMismatch("solutions live on different windows".into()));
    }
    let w = a.n() * a.d();
    let qv = remaining_qv_max(a, engine, |k, j| {
        let (za, zb) = (a.z_node(k), b.z_node(k));
        (j * w..(j + 1) * w).map(|r| (za[r] - zb[r]).powi(2)).sum()
    })?;
    Ok(qv.max(0.0).sqrt())
}

/// Norms of the frozen inputs of a local map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InputNorms {
    /// `sup |U|`.
    pub u_sup: f64,
    /// BMO norm of `V` (not squared).
    pub v_bmo: f64,
}

/// Right-hand sides of the system a-priori bounds for a solution on a
/// window of length `T - t`, against `max |Y|` and `bmo(Z)^2`.
pub fn check_apriori_local(
    sol: &Solution,
    engine: &Engine,
    cert: &CertificateLocal,
    consts: &LocalConstants,
    inputs: InputNorms,
) -> Result<Vec<BoundReport>> {
    let nf = sol.n() as f64;
    let len = sol.grid().time(sol.last_node()) - sol.grid().time(sol.first_node());
    let y_sup = max_norm_y(sol);
    let bmo = bmo_norm(sol, engine)?;
    Ok(apriori_bounds(nf, cert, consts.m_nla, inputs, len, y_sup)
        .into_iter()
        .zip([y_sup.0, bmo * bmo])
        .zip(["apriori_sup_y", "apriori_bmo_z"])
        .map(|((bound, observed), name)| {
            let r = BoundReport::new(name, bound, observed, MC_SLACK);
            if name == "apriori_sup_y" {
                r.at(y_sup.1)
            } else {
                r
            }
        })
        .collect())
}

/// `(sup |Y| bound, bmo(Z)^2 bound)` for `n` components on a window of
/// length `len`, with `|Y|` entering the second through `y_sup`.
pub fn apriori_bounds(
    nf: f64,
    cert: &CertificateLocal,
    m_nla: f64,
    inputs: InputNorms,
    len: f64,
    y_sup: (f64, Location),
) -> [f64; 2] {
    let a = cert.alpha;
    let (g, g0) = (cert.gamma, cert.gamma0);
    let psi = cert.psi.eval(inputs.u_sup) + cert.psi0.eval(inputs.u_sup);
    let v_root = inputs.v_bmo.powf(1.0 + a) * len.powf((1.0 - a) / 2.0);
    let v_pow = inputs.v_bmo.powf(2.0 * (1.0 + a) / (1.0 - a)) * len;
    let y_bound = nf / g * std::f64::consts::LN_2
        + nf * (cert.m1 + cert.m2)
        + nf * psi * len
        + nf * g0 * v_root
        + nf * g.powf((1.0 + a) / (1.0 - a)) * m_nla * v_pow;
    let z_bound = nf / g
        * (2.0 * g * y_sup.0).exp()
        * (1.0 + 2.0 * cert.m2 + 2.0 * psi * len + 2.0 * g0 * v_root + 2.0 * m_nla * v_pow)
        + nf / (g * g) * (2.0 * g * cert.m1).exp();
    [y_bound, z_bound]
}

/// Largest Euclidean `|Y_k^j|` and where it sits.
pub fn max_norm_y(sol: &Solution) -> (f64, Location) {
    let mut best = (0.0, Location { node: sol.first_node(), particle: 0, component: 0 });
    for k in sol.first_node()..=sol.last_node() {
        for j in 0..sol.particles() {
            let v = sol.y_of(k, j).iter().map(|x| x * x).sum::<f64>().sqrt();
            if v > best.0 {
                best = (v, Location { node: k, particle: j, component: 0 });
            }
        }
    }
    best
}

/// Pointwise envelope `|Y_t^i|^2 <= eta(t) / n`, reported as the worst ratio
/// against 1, plus the level checks `sup |Y|^2 <= kappa` and `sup |Y| <= J1`.
pub fn check_envelope(sol: &Solution, consts: &GlobalConstants) -> Vec<BoundReport> {
    let n = sol.n();
    let mut worst = (0.0f64, None);
    for k in sol.first_node()..=sol.last_node() {
        let cap = consts.eta(sol.grid().time(k)) / n as f64;
        for j in 0..sol.particles() {
            for (i, y) in sol.y_of(k, j).iter().enumerate() {
                let r = y * y / cap;
                if r > worst.0 || (worst.1.is_none() && r >= worst.0) {
                    worst = (r, Some(Location { node: k, particle: j, component: i }));
                }
            }
        }
    }
    let mut envelope = BoundReport::new("envelope", 1.0, worst.0, MC_SLACK);
    envelope.location = worst.1;
    let (sup, loc) = max_norm_y(sol);
    vec![
        envelope,
        BoundReport::new("kappa_level", consts.kappa, sup * sup, MC_SLACK).at(loc),
        BoundReport::new("j1_level", consts.j1, sup, MC_SLACK).at(loc),
    ]
}

/// `max_k mean_j exp(sum_{m >= k} |Z_m|^2 dt)` against `1 / (1 - bmo^2)`;
/// skipped unless `bmo < 1`.
pub fn john_nirenberg(sol: &Solution, engine: &Engine) -> Result<BoundReport> {
    let bmo = bmo_norm(sol, engine)?;
    if bmo >= 1.0 {
        return Ok(BoundReport::skipped(
            "john_nirenberg",
            format!("bmo norm {bmo:.4} is not below 1"),
        ));
    }
    let (k0, k1, np) = (sol.first_node(), sol.last_node(), sol.particles());
    let dt = sol.grid().dt();
    let w = sol.n() * sol.d();
    let mut acc = vec![0.0; np];
    let mut lhs = 1.0f64;
    for k in (k0..k1).rev() {
        let zk = sol.z_node(k);
        for (j, a) in acc.iter_mut().enumerate() {
            *a += zk[j * w..(j + 1) * w].iter().map(|v| v * v).sum::<f64>() * dt;
        }
        lhs = lhs.max(exp_moment(&acc, 1.0)?.value);
    }
    Ok(BoundReport::new("john_nirenberg", 1.0 / (1.0 - bmo * bmo), lhs, MC_SLACK))
}

/// Per component, `|mean_j sum_k Z_k dW_k| <= 4 sd / sqrt(N)`.
pub fn martingale_surrogate(sol: &Solution, paths: &PathEnsemble) -> Result<Vec<BoundReport>> {
    let (n, d, np) = (sol.n(), sol.d(), sol.particles());
    if paths.particles() != np || paths.dim() != d {
        return Err(Error::ShapeMismatch("ensemble does not match the solution".into()));
    }
    let mut sums = vec![0.0; np * n];
    for k in sol.first_node()..sol.last_node() {
        let (zk, dw) = (sol.z_node(k), paths.increment(k)?);
        for j in 0..np {
            for i in 0..n {
                let row = &zk[(j * n + i) * d..(j * n + i + 1) * d];
                sums[j * n + i] += row.iter().zip(&dw[j * d..(j + 1) * d]).map(|(z, w)| z * w).sum::<f64>();
            }
        }
    }
    Ok((0..n)
        .map(|i| {
            let col: Vec<f64> = sums.iter().skip(i).step_by(n).copied().collect();
            let mean = col.iter().sum::<f64>() / np as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (np.max(2) - 1) as f64;
            let mut r = BoundReport::new("martingale_surrogate", 4.0 * var.sqrt() / (np as f64).sqrt(), mean.abs(), 0.0);
            r.location = Some(Location { node: sol.first_node(), particle: 0, component: i });
            r
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaGap {
    pub theta: f64,
    /// `(Y^{m+p} - theta Y^m) / (1 - theta)` in the `Y` layout.
    pub delta: Vec<f64>,
    /// `(Y^m - theta Y^{m+p}) / (1 - theta)`.
    pub delta_tilde: Vec<f64>,
    /// `E exp(q sup_t |delta_t|)`, `q = 1, 2`.
    pub moments: Vec<ExpMoment>,
    pub moments_tilde: Vec<ExpMoment>,
}

pub fn theta_gap(ym: &Solution, ymp: &Solution, theta: f64) -> Result<ThetaGap> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidArgument(format!("theta must lie in (0, 1), got {theta}")));
    }
    if ym.y_values().len() != ymp.y_values().len()
        || ym.particles() != ymp.particles()
        || ym.first_node() != ymp.first_node()
    {
        return Err(Error::ShapeMismatch("theta gap needs solutions on the same window".into()));
    }
    let s = 1.0 - theta;
    let (a, b) = (ym.y_values(), ymp.y_values());
    let delta: Vec<f64> = a.iter().zip(b).map(|(m, p)| (p - theta * m) / s).collect();
    let delta_tilde: Vec<f64> = a.iter().zip(b).map(|(m, p)| (m - theta * p) / s).collect();
    let (np, n) = (ym.particles(), ym.n());
    let sups = |field: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0f64; np];
        for node in field.chunks(np * n) {
            for (j, o) in out.iter_mut().enumerate() {
                let v = node[j * n..(j + 1) * n].iter().map(|x| x * x).sum::<f64>().sqrt();
                *o = o.max(v);
            }
        }
        out
    };
    let (sd, st) = (sups(&delta), sups(&delta_tilde));
    Ok(ThetaGap {
        theta,
        moments: vec![exp_moment(&sd, 1.0)?, exp_moment(&sd, 2.0)?],
        moments_tilde: vec![exp_moment(&st, 1.0)?, exp_moment(&st, 2.0)?],
        delta,
        delta_tilde,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionSummary {
    /// `exp` of the least-squares slope of `ln d_m` against `m`.
    pub rate: f64,
    /// Non-increasing over the whole sequence.
    pub monotone: bool,
    /// Non-increasing from the second entry on.
    pub monotone_after_first: bool,
    pub contracting: bool,
}

/// Geometric fit of a sequence of Picard differences. Exact zeros end the
/// sequence; with fewer than two positive entries before them the rate is 0.
pub fn contraction_rate(differences: &[f64]) -> Result<ContractionSummary> {
    let has_zero = differences.contains(&0.0);
    if differences.len() < 3 && !has_zero {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 differences, got {}",
            differences.len()
        )));
    }
    if differences.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::InvalidArgument("differences must be finite and nonnegative".into()));
    }
    let positive: Vec<f64> = differences.iter().take_while(|d| **d > 0.0).copied().collect();
    let rate = if positive.len() < 2 {
        0.0
    } else {
        let m = positive.len() as f64;
        let xbar = (m - 1.0) / 2.0;
        let ybar = positive.iter().map(|d| d.ln()).sum::<f64>() / m;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (k, d) in positive.iter().enumerate() {
            let x = k as f64 - xbar;
            sxy += x * (d.ln() - ybar);
            sxx += x * x;
        }
        (sxy / sxx).exp()
    };
    let nonincreasing = |s: &[f64]| s.windows(2).all(|w| w[1] <= w[0]);
    Ok(ContractionSummary {
        rate,
        monotone: nonincreasing(differences),
        monotone_after_first: nonincreasing(&differences[1.min(differences.len())..]),
        contracting: rate < 1.0 - 1e-9,
    })
}

pub fn contraction_trace(trace: &PicardTrace) -> Result<ContractionSummary> {
    contraction_rate(&trace.differences())
}
