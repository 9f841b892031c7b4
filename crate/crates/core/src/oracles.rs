//! Reference values computed without the backward regression machinery.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::condexp::{Engine, RegressionBasis};
use crate::error::{Error, Result};
use crate::generators::Fixture;
use crate::paths::{build_grid, sample_brownian};
use crate::solvers::{solve_fixture, Scheme, SolverOptions};

/// Default cap on `particles * steps` for [`dense_reference`].
pub const DEFAULT_BUDGET: u64 = 1 << 26;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub y0: f64,
    pub method: String,
    pub error_bar: f64,
}

/// Nodes and weights of the `m`-point Gauss-Hermite rule for `exp(-x^2)`.
pub fn gauss_hermite(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mf = m as f64;
    let mut z = 0.0f64;
    for i in 0..m.div_ceil(2) {
        z = match i {
            0 => (2.0 * mf + 1.0).sqrt() - 1.85575 * (2.0 * mf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * mf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            // orthonormal Hermite recurrence
            let (mut p1, mut p2) = (pim4, 0.0);
            for j in 1..=m {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / j as f64).sqrt() * p2 - ((j as f64 - 1.0) / j as f64).sqrt() * p3;
            }
            pp = (2.0 * mf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[m - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[m - 1 - i] = w[i];
    }
    (x, w)
}

/// `E h(sqrt(var) G)` for standard normal `G`, by 64-point Gauss-Hermite.
fn gaussian_mean(h: impl Fn(f64) -> f64, var: f64) -> f64 {
    let (x, w) = gauss_hermite(64);
    let s = (2.0 * var).sqrt();
    x.iter().zip(&w).map(|(xi, wi)| wi * h(s * xi)).sum::<f64>() / std::f64::consts::PI.sqrt()
}

/// `E h(sqrt(var) G)` in log scale, `h = exp(q(.))`, shifted for stability.
fn log_gaussian_mgf(q: impl Fn(f64) -> f64, var: f64) -> f64 {
    let (x, w) = gauss_hermite(64);
    let s = (2.0 * var).sqrt();
    let e: Vec<f64> = x.iter().map(|xi| q(s * xi)).collect();
    let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = e.iter().zip(&w).map(|(ei, wi)| wi * (ei - m).exp()).sum();
    m + (sum / std::f64::consts::PI.sqrt()).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ColeHopfMethod {
    GaussHermite,
    MonteCarlo,
}

/// `Y_0 = ln E exp(gamma g(W_T)) / gamma` for the scalar BSDE with driver
/// `gamma |z|^2 / 2`. Monte Carlo refuses samplers whose exponential
/// moment keeps moving when the sample doubles.
pub fn cole_hopf(
    g: &dyn Fn(f64) -> f64,
    gamma: f64,
    horizon: f64,
    method: ColeHopfMethod,
    particles: usize,
    seed: u64,
) -> Result<OracleResult> {
    if !(gamma > 0.0 && horizon > 0.0) {
        return Err(Error::InvalidArgument("gamma and horizon must be positive".into()));
    }
    match method {
        ColeHopfMethod::GaussHermite => Ok(OracleResult {
            y0: log_gaussian_mgf(|w| gamma * g(w), horizon) / gamma,
            method: "gauss_hermite_64".into(),
            error_bar: 0.0,
        }),
        ColeHopfMethod::MonteCarlo => {
            if particles < 2 {
                return Err(Error::InvalidArgument("need at least two samples".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sd = horizon.sqrt();
            let e: Vec<f64> = (0..2 * particles)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    gamma * g(sd * z)
                })
                .collect();
            let stats = |s: &[f64]| -> (f64, f64) {
                let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let v: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
                // log-mean and its delta-method standard error
                (m + mean.ln(), (var / v.len() as f64).sqrt() / mean)
            };
            let (half, se_half) = stats(&e[..particles]);
            let (full, se_full) = stats(&e);
            if !full.is_finite() || (full - half).abs() > 10.0 * se_half.max(se_full) + 1e-12 || se_full > 0.5 {
                return Err(Error::Refused(format!(
                    "exponential moment unstable under sample doubling ({half:.4} vs {full:.4})"
                )));
            }
            Ok(OracleResult {
                y0: full / gamma,
                method: "monte_carlo".into(),
                error_bar: se_full / gamma,
            })
        }
    }
}

/// Pathwise `Y_t = ln E[exp(gamma g(w + W_{T-t}))] / gamma`.
pub fn cole_hopf_at(g: &dyn Fn(f64) -> f64, gamma: f64, horizon: f64, t: f64, w: f64) -> f64 {
    let rest = horizon - t;
    if rest <= 0.0 {
        return g(w);
    }
    log_gaussian_mgf(|x| gamma * g(w + x), rest) / gamma
}

/// Terminal of the linear mean-field oracle: `c + s W_T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffineTerminal {
    pub c: f64,
    pub s: f64,
}

/// Closed form for `f = a y + b E[y]` with terminal `c + s W_T`:
/// `Y_t = c e^{(a+b)(T-t)} + s e^{a(T-t)} W_t`, `Z_t = s e^{a(T-t)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearMfOracle {
    pub a: f64,
    pub b: f64,
    pub terminal: AffineTerminal,
    pub horizon: f64,
}

impl LinearMfOracle {
    pub fn y_at(&self, t: f64, w: f64) -> f64 {
        let r = self.horizon - t;
        self.terminal.c * ((self.a + self.b) * r).exp() + self.terminal.s * (self.a * r).exp() * w
    }

    pub fn z_at(&self, t: f64) -> f64 {
        self.terminal.s * (self.a * (self.horizon - t)).exp()
    }

    pub fn result(&self) -> OracleResult {
        OracleResult {
            y0: self.y_at(0.0, 0.0),
            method: "closed_form".into(),
            error_bar: 0.0,
        }
    }
}

pub fn linear_mf_oracle(a: f64, b: f64, terminal: AffineTerminal, horizon: f64) -> LinearMfOracle {
    LinearMfOracle { a, b, terminal, horizon }
}

/// Solver configuration handed to [`dense_reference`].
#[derive(Debug, Clone)]
pub struct ReferenceProblem<'a> {
    pub fixture: &'a Fixture,
    pub scheme: Scheme,
    pub horizon: f64,
    pub steps: usize,
    pub particles: usize,
    pub dim: usize,
    pub seed: u64,
    pub basis: RegressionBasis,
    pub opts: SolverOptions,
}

const BOOTSTRAP_RESAMPLES: usize = 20;

/// Re-solve with `r` times the steps and particles on a fresh seed and
/// report the mean first component of `Y_0`. The error bar is two
/// bootstrap standard deviations of the sample mean of the pathwise
/// estimator `Y_0 + sum_k Z_k dW_k`.
pub fn dense_reference(problem: &ReferenceProblem<'_>, r: usize, budget: u64) -> Result<OracleResult> {
    if r != 2 && r != 4 {
        return Err(Error::InvalidArgument(format!("refinement factor must be 2 or 4, got {r}")));
    }
    let steps = problem.steps * r;
    let particles = problem.particles * r;
    let cost = steps as u64 * particles as u64;
    if cost > budget {
        return Err(Error::BudgetExceeded { requested: cost, budget });
    }
    // split stream: keep it clear of the coarse run's seed
    let seed = problem.seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(r as u64));
    let paths = sample_brownian(build_grid(problem.horizon, steps)?, particles, problem.dim, seed)?;
    let engine = Engine::new(&paths, problem.basis.clone())?;
    let (sol, _) = solve_fixture(problem.fixture, problem.scheme, &paths, &engine, &problem.opts)?;
    let y0 = sol.y_start_mean()[0];
    // Y_0 + sum Z dW reproduces xi + int f dt along each path
    let (n, d) = (sol.n(), sol.d());
    let mut pathwise = vec![y0; particles];
    for k in 0..steps {
        let (zk, dw) = (sol.z_node(k), paths.increment(k)?);
        for (j, p) in pathwise.iter_mut().enumerate() {
            *p += (0..d).map(|l| zk[j * n * d + l] * dw[j * d + l]).sum::<f64>();
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let means: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| (0..particles).map(|_| pathwise[rng.random_range(0..particles)]).sum::<f64>() / particles as f64)
        .collect();
    let mu = means.iter().sum::<f64>() / means.len() as f64;
    let sd = (means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / (means.len() - 1) as f64).sqrt();
    Ok(OracleResult {
        y0,
        method: format!("dense_r{r}"),
        error_bar: 2.0 * sd,
    })
}

/// `E g(W_T)` by quadrature, for driverless references.
pub fn gaussian_expectation(g: &dyn Fn(f64) -> f64, horizon: f64) -> f64 {
    gaussian_mean(g, horizon)
}
