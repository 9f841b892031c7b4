use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{CertificateConvex, CertificateGlobal, CertificateLocal, GeneratorSpec};
use crate::error::Result;
use crate::measures::{MeasureView, ParticleCloud};

/// Default half-width of the sampling box for `y`, `z` and the synthetic laws.
pub const DEFAULT_RADIUS: f64 = 3.0;
const LAW_PARTICLES: usize = 6;

#[derive(Debug, Clone, Copy)]
pub enum CertificateRef<'a> {
    Local(&'a CertificateLocal),
    Global(&'a CertificateGlobal),
    Convex(&'a CertificateConvex),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub component: usize,
    pub t: f64,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub w2_mu1: f64,
    pub w2_mu2: f64,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub samples: usize,
    pub radius: f64,
    pub violations: Vec<Violation>,
}

impl GrowthReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn bound(cert: CertificateRef<'_>, i: usize, d: usize, y: &[f64], z: &[f64], law: &MeasureView) -> f64 {
    let zi = norm(&z[i * d..(i + 1) * d]);
    let ny = norm(y);
    match cert {
        CertificateRef::Local(c) => {
            let cross: f64 = z
                .chunks(d)
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, r)| norm(r).powf(1.0 + c.alpha))
                .sum();
            c.zeta
                + c.psi.eval(ny)
                + 0.5 * c.gamma * zi * zi
                + c.lambda * cross
                + c.psi0.eval(law.w2_y())
                + c.gamma0 * law.w2_z().powf(1.0 + c.alpha)
        }
        CertificateRef::Global(c) => c.zeta + c.l * ny + 0.5 * c.gamma * zi * zi + c.l * law.w2_y(),
        CertificateRef::Convex(c) => c.zeta + c.k * ny + 0.5 * c.gamma * zi * zi + c.k * law.w1_y(),
    }
}

/// Random audit of `|f^i|` against the growth bound of `cert` on the box
/// of half-width [`DEFAULT_RADIUS`].
pub fn check_growth(spec: &GeneratorSpec, cert: CertificateRef<'_>, budget: usize, seed: u64) -> Result<GrowthReport> {
    check_growth_in(spec, cert, budget, seed, DEFAULT_RADIUS)
}

pub fn check_growth_in(
    spec: &GeneratorSpec,
    cert: CertificateRef<'_>,
    budget: usize,
    seed: u64,
    radius: f64,
) -> Result<GrowthReport> {
    let (n, d) = (spec.n(), spec.d());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    let uniform = |rng: &mut ChaCha8Rng, len: usize, r: f64| -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-r..=r)).collect()
    };
    for _ in 0..budget {
        let t: f64 = rng.random();
        let y = uniform(&mut rng, n, radius);
        let z = uniform(&mut rng, n * d, radius);
        let sy = rng.random_range(0.0..=radius);
        let sz = rng.random_range(0.0..=radius);
        let ly = uniform(&mut rng, LAW_PARTICLES * n, sy);
        let lz = uniform(&mut rng, LAW_PARTICLES * n * d, sz);
        let law = MeasureView::new(ParticleCloud::new(n, ly)?, ParticleCloud::new(n * d, lz)?)?;
        for i in 0..n {
            let value = spec.component(i, t, &y, &z, &law, &[]);
            let b = bound(cert, i, d, &y, &z, &law);
            if !value.is_finite() || value.abs() > b * (1.0 + 1e-12) + 1e-12 {
                violations.push(Violation {
                    component: i,
                    t,
                    y: y.clone(),
                    z: z.clone(),
                    w2_mu1: law.w2_y(),
                    w2_mu2: law.w2_z(),
                    value,
                    bound: b,
                });
            }
        }
    }
    Ok(GrowthReport {
        samples: budget,
        radius,
        violations,
    })
}
