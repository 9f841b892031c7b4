//! Closed-form constants derived from certificates.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::generators::{CertificateConvex, CertificateGlobal, CertificateLocal, Monomial};

/// Serialize an `f64`, writing non-finite values as strings so JSON stays valid.
pub fn ser_f64<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&v.to_string())
    }
}

fn ser_opt_f64<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => ser_f64(x, s),
        None => s.serialize_none(),
    }
}

/// Residual tolerance of the window equations, relative to `max(1, rhs)`.
pub const WINDOW_RESIDUAL_TOL: f64 = 1e-10;

pub fn m_const(n: usize, lambda: f64, alpha: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    let nl = n as f64 * lambda;
    Ok(0.5 * (1.0 - alpha) * (1.0 + alpha).powf((1.0 + alpha) / (1.0 - alpha)) * nl.powf(2.0 / (1.0 - alpha)))
}

/// Radii `(K1, K2)` of the stability ball.
pub fn local_radii(cert: &CertificateLocal, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let g = cert.gamma;
    let k1 = 2.0 * nf / g * std::f64::consts::LN_2 + 2.0 * nf * (cert.m1 + cert.m2);
    let k2 = 2.0 * nf / (g * g) * (2.0 * g * cert.m1).exp() + 2.0 * nf / g * (2.0 * g * k1).exp() * (1.0 + 2.0 * cert.m2);
    (k1, k2)
}

/// `lin * x + root * x^power = rhs`, with `power` in `(0, 1/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowEquation {
    #[serde(serialize_with = "ser_f64")]
    pub lin: f64,
    #[serde(serialize_with = "ser_f64")]
    pub root: f64,
    pub power: f64,
    #[serde(serialize_with = "ser_f64")]
    pub rhs: f64,
}

impl WindowEquation {
    pub fn lhs(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        self.lin * x + self.root * x.powf(self.power)
    }

    fn degenerate(&self) -> bool {
        !(self.lin.is_finite() && self.root.is_finite() && self.rhs.is_finite())
    }

    /// Bisection on `[0, B]` with `B` doubled until the sign changes.
    /// Returns `(root, |residual|)`; a non-finite coefficient gives `(0, NaN)`.
    pub fn solve(&self) -> Result<(f64, f64)> {
        if self.degenerate() {
            return Ok((0.0, f64::NAN));
        }
        if self.rhs <= 0.0 {
            return Ok((0.0, self.rhs.abs()));
        }
        let mut hi = 1.0;
        let mut doublings = 0;
        while self.lhs(hi) < self.rhs {
            hi *= 2.0;
            doublings += 1;
            if doublings > 60 * 20 || !hi.is_finite() {
                return Err(Error::Bracket(format!("no sign change for {self:?}")));
            }
        }
        let mut lo = 0.0;
        for _ in 0..5000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.lhs(mid) < self.rhs {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (rl, rh) = ((self.lhs(lo) - self.rhs).abs(), (self.lhs(hi) - self.rhs).abs());
        Ok(if rl <= rh { (lo, rl) } else { (hi, rh) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalConstants {
    #[serde(serialize_with = "ser_f64")]
    pub m_nla: f64,
    #[serde(serialize_with = "ser_f64")]
    pub k1: f64,
    #[serde(serialize_with = "ser_f64")]
    pub k2: f64,
    #[serde(serialize_with = "ser_f64")]
    pub x1: f64,
    #[serde(serialize_with = "ser_f64")]
    pub x2: f64,
    #[serde(serialize_with = "ser_f64")]
    pub eps: f64,
    #[serde(serialize_with = "ser_f64")]
    pub residual1: f64,
    #[serde(serialize_with = "ser_f64")]
    pub residual2: f64,
    /// Some coefficient overflowed, so the window collapsed to zero.
    pub degenerate: bool,
}

/// The two window equations in the form [`WindowEquation`].
pub fn window_equations(cert: &CertificateLocal, n: usize) -> Result<(WindowEquation, WindowEquation)> {
    let nf = n as f64;
    let a = cert.alpha;
    let m = m_const(n, cert.lambda, a)?;
    let (k1, k2) = local_radii(cert, n);
    let psi_sum = cert.psi.eval(k1) + cert.psi0.eval(k1);
    let k2_half = k2.powf((1.0 + a) / 2.0);
    let k2_pow = k2.powf((1.0 + a) / (1.0 - a));
    let power = (1.0 - a) / 2.0;
    let first = WindowEquation {
        lin: nf * psi_sum + nf * cert.gamma.powf((1.0 + a) / (1.0 - a)) * m * k2_pow,
        root: nf * cert.gamma0 * k2_half,
        power,
        rhs: k1 / 2.0,
    };
    let second = WindowEquation {
        lin: 2.0 * psi_sum + 2.0 * m * k2_pow,
        root: 2.0 * cert.gamma0 * k2_half,
        power,
        rhs: cert.gamma * k2 / (2.0 * nf) * (-2.0 * cert.gamma * k1).exp(),
    };
    Ok((first, second))
}

pub fn local_window(cert: &CertificateLocal, n: usize) -> Result<LocalConstants> {
    cert.validate()?;
    let (k1, k2) = local_radii(cert, n);
    let (e1, e2) = window_equations(cert, n)?;
    let (x1, residual1) = e1.solve()?;
    let (x2, residual2) = e2.solve()?;
    Ok(LocalConstants {
        m_nla: m_const(n, cert.lambda, cert.alpha)?,
        k1,
        k2,
        x1,
        x2,
        eps: x1.min(x2),
        residual1,
        residual2,
        degenerate: e1.degenerate() || e2.degenerate(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GlobalConstants {
    pub n: usize,
    pub horizon: f64,
    pub c_tilde: f64,
    /// `eta' = -a eta - b`, `eta(T) = terminal`
    pub eta_a: f64,
    pub eta_b: f64,
    pub eta_terminal: f64,
    #[serde(serialize_with = "ser_f64")]
    pub kappa: f64,
    #[serde(serialize_with = "ser_f64")]
    pub delta_kappa: f64,
    #[serde(serialize_with = "ser_f64")]
    pub j1: f64,
    #[serde(serialize_with = "ser_f64")]
    pub j2: f64,
    /// Window constants of the local certificate used for `delta_kappa`.
    pub window: LocalConstants,
}

impl GlobalConstants {
    pub fn eta(&self, t: f64) -> f64 {
        eta_closed(self.c_tilde, self.n, self.horizon, t)
    }
}

/// `eta(t) = (nC + b/a) e^{a(T-t)} - b/a` with `a = C(2n+1)`, `b = nC`.
pub fn eta_closed(c_tilde: f64, n: usize, horizon: f64, t: f64) -> f64 {
    let nf = n as f64;
    let (a, b) = (c_tilde * (2.0 * nf + 1.0), nf * c_tilde);
    (nf * c_tilde + b / a) * (a * (horizon - t)).exp() - b / a
}

/// The local certificate implied by a global one on terminals bounded by
/// `sqrt(kappa)`: `psi = psi0 = L x`, `M2 = sqrt(T M3)` and vanishing cross
/// and `Z`-law coefficients.
pub fn derived_local(cert: &CertificateGlobal, kappa: f64, horizon: f64) -> CertificateLocal {
    CertificateLocal {
        gamma: cert.gamma,
        lambda: 1e-12,
        gamma0: 1e-12,
        alpha: 0.0,
        m1: kappa.sqrt(),
        m2: (horizon * cert.m3).sqrt(),
        zeta: cert.zeta,
        psi: Monomial::linear(cert.l),
        psi0: Monomial::linear(cert.l),
    }
}

pub fn global_ode(cert: &CertificateGlobal, n: usize, horizon: f64) -> Result<GlobalConstants> {
    cert.validate()?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let nf = n as f64;
    let c_tilde = cert.m1 * cert.m1 + cert.m3 + 3.0 * cert.l * cert.l + 2.0;
    let kappa = eta_closed(c_tilde, n, horizon, 0.0);
    let j1 = kappa.sqrt();
    let j2 = 2.0 * nf * phi(cert.gamma, cert.m1)?.value
        + 2.0 * nf * phi(cert.gamma, j1)?.d1 * ((horizon * cert.m3).sqrt() + 2.0 * cert.l * j1 * horizon);
    let window = local_window(&derived_local(cert, kappa, horizon), n)?;
    Ok(GlobalConstants {
        n,
        horizon,
        c_tilde,
        eta_a: c_tilde * (2.0 * nf + 1.0),
        eta_b: nf * c_tilde,
        eta_terminal: nf * c_tilde,
        kappa,
        delta_kappa: window.eps,
        j1,
        j2,
        window,
    })
}

/// Classical RK4 for the `eta` equation, integrated backward from `T`.
pub fn eta_rk4(c_tilde: f64, n: usize, horizon: f64, steps: usize) -> f64 {
    let nf = n as f64;
    let (a, b) = (c_tilde * (2.0 * nf + 1.0), nf * c_tilde);
    // s = T - t turns the terminal problem into u' = a u + b, u(0) = n C
    let rhs = |u: f64| a * u + b;
    let h = horizon / steps as f64;
    let mut u = nf * c_tilde;
    for _ in 0..steps {
        let k1 = rhs(u);
        let k2 = rhs(u + 0.5 * h * k1);
        let k3 = rhs(u + 0.5 * h * k2);
        let k4 = rhs(u + h * k3);
        u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    u
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhiValue {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// `phi(x) = (e^{g|x|} - g|x| - 1) / g^2` with its first two derivatives.
pub fn phi(gamma: f64, x: f64) -> Result<PhiValue> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    let gx = gamma * x.abs();
    let em1 = gx.exp_m1();
    Ok(PhiValue {
        value: (em1 - gx) / (gamma * gamma),
        d1: em1 / gamma * x.signum() * if x == 0.0 { 0.0 } else { 1.0 },
        d2: gx.exp(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThetaConstants {
    pub q: f64,
    pub r_of_q: f64,
    pub m0: Option<u64>,
    #[serde(serialize_with = "ser_opt_f64")]
    pub window: Option<f64>,
    #[serde(serialize_with = "ser_opt_f64")]
    pub eps_star: Option<f64>,
    pub n0: Option<u64>,
}

pub fn r_of_q(q: f64) -> Result<f64> {
    if !(q > 1.0) {
        return Err(Error::InvalidArgument(format!("q must exceed 1, got {q}")));
    }
    Ok((q / (q - 1.0)).powf(2.0 * q))
}

pub fn theta_consts(cert: &CertificateConvex, n: usize, horizon: f64, q: f64) -> Result<ThetaConstants> {
    let r = r_of_q(q)?;
    let nk = n as f64 * cert.k;
    if cert.k == 0.0 {
        return Ok(ThetaConstants {
            q,
            r_of_q: r,
            m0: None,
            window: None,
            eps_star: None,
            n0: None,
        });
    }
    Ok(ThetaConstants {
        q,
        r_of_q: r,
        m0: Some((4.0 * nk * horizon).ceil().max(1.0) as u64),
        window: Some(1.0 / (4.0 * nk)),
        eps_star: Some(1.0 / (16.0 * nk)),
        n0: Some((16.0 * nk * horizon).ceil().max(1.0) as u64),
    })
}

/// Exponential weight `beta = 32 C^2 T` of the Volterra contraction norm.
pub fn volterra_weight(c: f64, horizon: f64) -> f64 {
    32.0 * c * c * horizon
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{fixture, Curvature, FixtureParams, FIXTURES};
    use proptest::prelude::*;
    use std::f64::consts::{E, LN_2};

    fn cert(gamma: f64, m1: f64, m2: f64) -> CertificateLocal {
        CertificateLocal {
            gamma,
            lambda: 1.0,
            gamma0: 1.0,
            alpha: 0.0,
            m1,
            m2,
            zeta: 0.0,
            psi: Monomial::ZERO,
            psi0: Monomial::ZERO,
        }
    }

    #[test]
    fn m_const_examples() {
        assert_eq!(m_const(2, 1.0, 0.0).unwrap(), 2.0);
        assert_eq!(m_const(1, 1.0, 0.0).unwrap(), 0.5);
        assert!((m_const(1, 1.0, 0.5).unwrap() - 27.0 / 32.0).abs() < 1e-12);
        assert!(m_const(1, 1.0, 1.0).is_err());
    }

    #[test]
    fn m_const_has_no_jumps_in_alpha() {
        let h = 1e-4;
        let mut prev = m_const(2, 0.7, 0.0).unwrap();
        let mut a = h;
        while a < 0.9 {
            let cur = m_const(2, 0.7, a).unwrap();
            let slope = (m_const(2, 0.7, a + 1e-7).unwrap() - cur) / 1e-7;
            assert!((cur - prev).abs() <= 2.0 * slope.abs() * h + 1e-12, "jump at alpha={a}");
            prev = cur;
            a += h;
        }
    }

    #[test]
    fn radii_examples() {
        let (k1, _) = local_radii(&cert(1.0, 1.0, 0.0), 1);
        assert!((k1 - (2.0 * LN_2 + 2.0)).abs() < 1e-12);
        let (k1, k2) = local_radii(&cert(1.0, 0.0, 0.0), 1);
        assert!((k1 - 2.0 * LN_2).abs() < 1e-12);
        assert!((k2 - 34.0).abs() < 1e-12);
        let ks: Vec<f64> = [0.0, 1.0, 2.0].iter().map(|&m| local_radii(&cert(1.0, m, 0.0), 1).1).collect();
        assert!(ks[0] < ks[1] && ks[1] < ks[2]);
    }

    /// Closed form of `lin x + root sqrt(x) = rhs` via `s = sqrt(x)`.
    fn sqrt_oracle(lin: f64, root: f64, rhs: f64) -> f64 {
        let s = 2.0 * rhs / (root + (root * root + 4.0 * lin * rhs).sqrt());
        s * s
    }

    #[test]
    fn window_examples() {
        let c = cert(1.0, 1.0, 0.0);
        let w = local_window(&c, 1).unwrap();
        assert!(w.eps > 0.0 && w.eps <= w.x1.min(w.x2));
        let (e1, e2) = window_equations(&c, 1).unwrap();
        assert_eq!(e1.lhs(0.0), 0.0);
        assert!(e1.lhs(0.0) < e1.rhs);
        assert!((w.x1 - sqrt_oracle(e1.lin, e1.root, e1.rhs)).abs() <= 1e-10 * w.x1.max(1e-300));
        assert!((w.x2 - sqrt_oracle(e2.lin, e2.root, e2.rhs)).abs() <= 1e-10 * w.x2.max(1e-300));
        let mut prev = f64::INFINITY;
        for g0 in [0.5, 1.0, 2.0, 4.0] {
            let x1 = local_window(&CertificateLocal { gamma0: g0, ..c }, 1).unwrap().x1;
            assert!(x1 < prev);
            prev = x1;
        }
    }

    #[test]
    fn fixture_windows_are_positive_with_small_residuals() {
        for name in FIXTURES {
            let f = fixture(name, &FixtureParams::default(), 1.0).unwrap();
            if let Some(l) = &f.certificates.local {
                let w = local_window(l, f.spec.n()).unwrap();
                assert!(w.eps > 0.0, "{name}");
                let (e1, e2) = window_equations(l, f.spec.n()).unwrap();
                assert!(w.residual1 <= WINDOW_RESIDUAL_TOL * e1.rhs.max(1.0));
                assert!(w.residual2 <= WINDOW_RESIDUAL_TOL * e2.rhs.max(1.0));
            }
        }
    }

    #[test]
    fn eta_examples() {
        let g = CertificateGlobal {
            l: 1e-9,
            gamma: 1.0,
            m1: 0.0,
            m3: 0.0,
            zeta: 0.0,
            psi: Monomial::ZERO,
        };
        // C~ = 3 L^2 + 2 = 2 + tiny
        let gc = global_ode(&g, 1, 1.0).unwrap();
        assert!((gc.c_tilde - 2.0).abs() < 1e-12);
        assert_eq!(gc.eta(1.0), gc.eta_terminal);
        assert_eq!(gc.eta_terminal, 1.0 * gc.c_tilde);

        let closed = eta_closed(1.0, 1, 1.0, 0.0);
        assert!((closed - ((4.0 / 3.0) * E.powi(3) - 1.0 / 3.0)).abs() < 1e-12);
        assert!((closed - 26.4473).abs() < 1e-4);
        let rk = eta_rk4(1.0, 1, 1.0, 10_000);
        assert!((rk - closed).abs() < 1e-8);
    }

    #[test]
    fn eq41_global_constants() {
        let f = fixture("eq41", &FixtureParams::default(), 1.0).unwrap();
        let g = global_ode(f.certificates.global.as_ref().unwrap(), 2, 1.0).unwrap();
        assert_eq!(g.c_tilde, 10.0);
        assert!(g.kappa >= g.eta_terminal);
        let mut prev = g.eta(0.0);
        for k in 1..=1000 {
            let e = g.eta(k as f64 / 1000.0);
            assert!(e < prev && e >= 2.0 * 10.0 * (1.0 - 1e-15));
            prev = e;
        }
        assert!(g.delta_kappa >= 0.0);
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi(1.0, 0.0).unwrap().value, 0.0);
        assert!((phi(1.0, 1.0).unwrap().value - (E - 2.0)).abs() < 1e-15);
        assert!(phi(0.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn phi_identity(gamma in 0.1f64..2.0, x in -3.0f64..3.0) {
            let p = phi(gamma, x).unwrap();
            prop_assert!((p.d2 - gamma * p.d1.abs() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn theta_examples() {
        let c = CertificateConvex {
            k: 1.0,
            gamma: 1.0,
            zeta: 0.0,
            convexity: vec![Curvature::Convex],
        };
        let t = theta_consts(&c, 1, 1.0, 2.0).unwrap();
        assert_eq!(t.r_of_q, 16.0);
        assert_eq!(t.m0, Some(4));
        assert_eq!(t.eps_star, Some(1.0 / 16.0));
        assert_eq!(t.n0, Some(16));
        let zero = theta_consts(&CertificateConvex { k: 0.0, ..c.clone() }, 1, 1.0, 2.0).unwrap();
        assert_eq!(zero.m0, None);
        assert_eq!(volterra_weight(1.0, 1.0), 32.0);
        // 4nKT <= m0 < 4nKT + 1
        for (k, t) in [(0.3, 1.0), (0.25, 2.0), (1.7, 0.5)] {
            let m0 = theta_consts(&CertificateConvex { k, ..c.clone() }, 2, t, 2.0).unwrap().m0.unwrap() as f64;
            let x = 8.0 * k * t;
            assert!(x <= m0 && m0 < x + 1.0);
        }
    }

    #[test]
    fn constants_are_deterministic() {
        let f = fixture("remark31", &FixtureParams::default(), 1.0).unwrap();
        let a = local_window(f.certificates.local.as_ref().unwrap(), 2).unwrap();
        let b = local_window(f.certificates.local.as_ref().unwrap(), 2).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}
