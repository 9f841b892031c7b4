//! Empirical laws over particle clouds.
//!
//! The hot path only needs Wasserstein distances to the Dirac mass at the
//! origin, which are moment roots. Distances between two empirical laws are
//! bounded by the index coupling ([`paired_distance`]); that bound is what the
//! contraction monitors use.

use serde::Serialize;

use crate::error::{Error, Result};

/// `N` samples in `R^m`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    dim: usize,
    points: Vec<f64>,
}

impl ParticleCloud {
    pub fn new(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::InvalidArgument(format!(
                "cloud needs a positive multiple of dim={dim} entries, got {}",
                points.len()
            )));
        }
        if let Some(pos) = points.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite cloud entry at {pos}")));
        }
        Ok(ParticleCloud { dim, points })
    }

    /// Scalar samples.
    pub fn scalar(values: &[f64]) -> Result<Self> {
        Self::new(1, values.to_vec())
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn scaled(&self, c: f64) -> ParticleCloud {
        ParticleCloud {
            dim: self.dim,
            points: self.points.iter().map(|x| c * x).collect(),
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn power_mean(values: impl Iterator<Item = f64>, count: usize, p: f64) -> f64 {
    if p == 2.0 {
        let s: f64 = values.map(|v| v * v).sum();
        (s / count as f64).sqrt()
    } else if p == 1.0 {
        values.sum::<f64>() / count as f64
    } else {
        let s: f64 = values.map(|v| v.powf(p)).sum();
        (s / count as f64).powf(1.0 / p)
    }
}

/// `W_p(mu, delta_0) = (mean |x|^p)^(1/p)`.
pub fn wasserstein_to_delta(cloud: &ParticleCloud, p: f64) -> Result<f64> {
    if p < 1.0 || !p.is_finite() {
        return Err(Error::InvalidArgument(format!("order p must be >= 1, got {p}")));
    }
    if cloud.is_empty() {
        return Err(Error::InvalidArgument("empty cloud".into()));
    }
    let n = cloud.len();
    Ok(power_mean((0..n).map(|j| norm(cloud.point(j))), n, p))
}

/// Index-coupling distance `(mean |a_i - b_i|^p)^(1/p)`.
///
/// This is the cost of one particular coupling, hence an upper bound for the
/// Wasserstein distance between the two empirical laws, never the distance
/// itself (see [`exact_two_point_wasserstein`]).
pub fn paired_distance(a: &ParticleCloud, b: &ParticleCloud, p: f64) -> Result<f64> {
    if a.dim != b.dim || a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "clouds {}x{} and {}x{}",
            a.len(),
            a.dim,
            b.len(),
            b.dim
        )));
    }
    if p < 1.0 {
        return Err(Error::InvalidArgument(format!("order p must be >= 1, got {p}")));
    }
    let n = a.len();
    Ok(power_mean(
        (0..n).map(|j| {
            a.point(j)
                .iter()
                .zip(b.point(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        }),
        n,
        p,
    ))
}

/// Optimal transport between two uniform two-point laws: only two couplings
/// (identity and swap) are extremal.
pub fn exact_two_point_wasserstein(a: &ParticleCloud, b: &ParticleCloud, p: f64) -> Result<f64> {
    if a.len() != 2 || b.len() != 2 || a.dim != b.dim {
        return Err(Error::ShapeMismatch("two-point solver needs 2 points on each side".into()));
    }
    let d = |x: &[f64], y: &[f64]| {
        x.iter()
            .zip(y)
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt()
            .powf(p)
    };
    let identity = d(a.point(0), b.point(0)) + d(a.point(1), b.point(1));
    let swap = d(a.point(0), b.point(1)) + d(a.point(1), b.point(0));
    Ok((identity.min(swap) / 2.0).powf(1.0 / p))
}

/// Sample average of `phi` over the cloud.
pub fn moment(cloud: &ParticleCloud, phi: impl Fn(&[f64]) -> f64) -> f64 {
    let n = cloud.len();
    (0..n).map(|j| phi(cloud.point(j))).sum::<f64>() / n as f64
}

/// Exponential moment `(1/N) sum exp(q s_i)` with its logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpMoment {
    /// Linear value; `inf` once the logarithm exceeds the `f64` range.
    pub value: f64,
    /// Authoritative in log scale.
    pub log_value: f64,
}

/// Log-sum-exp with the maximum subtracted.
pub fn log_mean_exp(exponents: &[f64]) -> f64 {
    if exponents.is_empty() {
        return f64::NEG_INFINITY;
    }
    let m = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = exponents.iter().map(|e| (e - m).exp()).sum();
    m + (s / exponents.len() as f64).ln()
}

pub fn exp_moment(samples: &[f64], q: f64) -> Result<ExpMoment> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    if let Some(pos) = samples.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite sample at {pos}")));
    }
    let exps: Vec<f64> = samples.iter().map(|s| q * s).collect();
    let log_value = log_mean_exp(&exps);
    Ok(ExpMoment {
        value: log_value.exp(),
        log_value,
    })
}

/// Read-only view of the joint empirical law of `(Y, Z)` at one time node.
///
/// `y` holds `N x n` points and `z` holds `N x (n d)` flattened matrices;
/// when `coupled`, row `j` of both clouds is the same particle. Summary
/// statistics that drivers query per particle are computed once here.
#[derive(Debug, Clone)]
pub struct MeasureView {
    y: Option<ParticleCloud>,
    z: Option<ParticleCloud>,
    coupled: bool,
    w2_y: f64,
    w1_y: f64,
    w2_z: f64,
    mean_y: Vec<f64>,
}

impl MeasureView {
    pub fn new(y: ParticleCloud, z: ParticleCloud) -> Result<Self> {
        if y.len() != z.len() {
            return Err(Error::ShapeMismatch(format!(
                "coupled clouds have {} and {} particles",
                y.len(),
                z.len()
            )));
        }
        let mut v = Self::from_y(y)?;
        v.w2_z = wasserstein_to_delta(&z, 2.0)?;
        v.z = Some(z);
        v.coupled = true;
        Ok(v)
    }

    /// Law of `Y` only; the `Z`-marginal is the Dirac mass at the origin.
    pub fn from_y(y: ParticleCloud) -> Result<Self> {
        let n = y.dim();
        let mut mean_y = vec![0.0; n];
        for j in 0..y.len() {
            for (m, v) in mean_y.iter_mut().zip(y.point(j)) {
                *m += v;
            }
        }
        for m in mean_y.iter_mut() {
            *m /= y.len() as f64;
        }
        Ok(MeasureView {
            w2_y: wasserstein_to_delta(&y, 2.0)?,
            w1_y: wasserstein_to_delta(&y, 1.0)?,
            w2_z: 0.0,
            mean_y,
            y: Some(y),
            z: None,
            coupled: false,
        })
    }

    /// The Dirac law `delta_0`.
    pub fn dirac(n: usize) -> Self {
        MeasureView {
            y: None,
            z: None,
            coupled: false,
            w2_y: 0.0,
            w1_y: 0.0,
            w2_z: 0.0,
            mean_y: vec![0.0; n],
        }
    }

    pub fn is_coupled(&self) -> bool {
        self.coupled
    }

    /// First marginal (law of `Y`), if present.
    pub fn mu1(&self) -> Option<&ParticleCloud> {
        self.y.as_ref()
    }

    /// Second marginal (law of `Z`), if present.
    pub fn mu2(&self) -> Option<&ParticleCloud> {
        self.z.as_ref()
    }

    /// `W_2(mu_1, delta_0)`.
    pub fn w2_y(&self) -> f64 {
        self.w2_y
    }

    /// `W_1(mu_1, delta_0) = E|Y|`.
    pub fn w1_y(&self) -> f64 {
        self.w1_y
    }

    /// `W_2(mu_2, delta_0)`.
    pub fn w2_z(&self) -> f64 {
        self.w2_z
    }

    /// `E[Y^i]`.
    pub fn mean_y(&self, i: usize) -> f64 {
        self.mean_y[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud(v: &[f64]) -> ParticleCloud {
        ParticleCloud::scalar(v).unwrap()
    }

    #[test]
    fn wasserstein_examples() {
        let w = wasserstein_to_delta(&cloud(&[1.0, 2.0, 2.0]), 2.0).unwrap();
        assert!((w - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(wasserstein_to_delta(&cloud(&[0.0, 0.0]), 1.0).unwrap(), 0.0);
        assert_eq!(wasserstein_to_delta(&cloud(&[0.0, 0.0]), 2.0).unwrap(), 0.0);
        assert_eq!(wasserstein_to_delta(&cloud(&[-3.0, 4.0]), 1.0).unwrap(), 3.5);
    }

    #[test]
    fn empty_cloud_rejected() {
        assert!(ParticleCloud::new(1, vec![]).is_err());
        assert!(ParticleCloud::new(2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn paired_distance_examples() {
        let a = cloud(&[0.0, 1.0]);
        assert_eq!(paired_distance(&a, &a, 2.0).unwrap(), 0.0);
        let shifted = paired_distance(&cloud(&[0.0, 0.0]), &cloud(&[1.0, 1.0]), 2.0).unwrap();
        assert!((shifted - 1.0).abs() < 1e-15);
        let b = cloud(&[1.0, 0.0]);
        assert_eq!(paired_distance(&a, &b, 1.0).unwrap(), 1.0);
        // the laws coincide; only the coupling is bad
        assert_eq!(exact_two_point_wasserstein(&a, &b, 1.0).unwrap(), 0.0);
        assert!(paired_distance(&a, &cloud(&[1.0]), 1.0).is_err());
    }

    #[test]
    fn moment_examples() {
        assert_eq!(moment(&cloud(&[4.0, 5.0]), |_| 1.0), 1.0);
        assert_eq!(moment(&cloud(&[1.0, 2.0, 3.0]), |x| x[0]), 2.0);
        let c = cloud(&[1.0, 2.0, 2.0]);
        let m2 = moment(&c, |x| x[0] * x[0]);
        assert!((m2 - wasserstein_to_delta(&c, 2.0).unwrap().powi(2)).abs() < 1e-14);
    }

    #[test]
    fn exp_moment_examples() {
        let e = exp_moment(&[0.0; 5], 3.0).unwrap();
        assert_eq!(e.value, 1.0);
        let ln2 = std::f64::consts::LN_2;
        let e = exp_moment(&[ln2, ln2], 1.0).unwrap();
        assert!((e.value - 2.0).abs() < 1e-15);
        // log scale survives where the linear value overflows
        let e = exp_moment(&[800.0, 800.0], 1.0).unwrap();
        assert!(e.value.is_infinite());
        assert!((e.log_value - 800.0).abs() < 1e-12);
    }

    #[test]
    fn exp_moment_of_gaussian() {
        use crate::paths::{build_grid, sample_brownian};
        let g = build_grid(1.0, 1).unwrap();
        let e = sample_brownian(g, 100_000, 1, 31).unwrap();
        let m = exp_moment(e.brownian_at(1).unwrap(), 1.0).unwrap();
        assert!((m.value / 0.5f64.exp() - 1.0).abs() < 0.05);
    }

    #[test]
    fn view_summaries() {
        let y = ParticleCloud::new(2, vec![1.0, 0.0, 0.0, 3.0]).unwrap();
        let z = ParticleCloud::new(1, vec![2.0, 2.0]).unwrap();
        let v = MeasureView::new(y, z).unwrap();
        assert!(v.is_coupled());
        assert_eq!(v.mean_y(0), 0.5);
        assert_eq!(v.mean_y(1), 1.5);
        assert_eq!(v.w1_y(), 2.0);
        assert!((v.w2_y() - 5f64.sqrt()).abs() < 1e-15);
        assert_eq!(v.w2_z(), 2.0);
        let bad = MeasureView::new(cloud(&[1.0]), cloud(&[1.0, 2.0]));
        assert!(bad.is_err());
    }

    proptest! {
        #[test]
        fn scaling_and_power_mean(pts in prop::collection::vec(-50.0f64..50.0, 1..40), c in -5.0f64..5.0) {
            let cl = cloud(&pts);
            let w1 = wasserstein_to_delta(&cl, 1.0).unwrap();
            let w2 = wasserstein_to_delta(&cl, 2.0).unwrap();
            prop_assert!(w1 <= w2 * (1.0 + 1e-12) + 1e-12);
            let scaled = wasserstein_to_delta(&cl.scaled(c), 2.0).unwrap();
            prop_assert!((scaled - c.abs() * w2).abs() <= 1e-10 * (1.0 + w2 * c.abs()));
        }

        #[test]
        fn triangle_and_permutation(
            rows in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0), 2..30),
            rot in 0usize..30,
        ) {
            let a = cloud(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
            let b = cloud(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
            let c = cloud(&rows.iter().map(|r| r.2).collect::<Vec<_>>());
            for p in [1.0, 2.0] {
                let ac = paired_distance(&a, &c, p).unwrap();
                let ab = paired_distance(&a, &b, p).unwrap();
                let bc = paired_distance(&b, &c, p).unwrap();
                prop_assert!(ac <= ab + bc + 1e-9);
            }
            // same permutation on both clouds leaves every query unchanged
            let k = rot % rows.len();
            let perm = |cl: &ParticleCloud| {
                let mut v = cl.points().to_vec();
                v.rotate_left(k);
                cloud(&v)
            };
            let d0 = paired_distance(&a, &b, 2.0).unwrap();
            let d1 = paired_distance(&perm(&a), &perm(&b), 2.0).unwrap();
            prop_assert!((d0 - d1).abs() <= 1e-12 * (1.0 + d0));
            let w0 = wasserstein_to_delta(&a, 1.0).unwrap();
            let w1 = wasserstein_to_delta(&perm(&a), 1.0).unwrap();
            prop_assert!((w0 - w1).abs() <= 1e-12 * (1.0 + w0));
        }
    }
}
