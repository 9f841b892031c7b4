use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    Certificates, CertificateConvex, CertificateGlobal, CertificateLocal, CertificateVolterra, Curvature,
    GeneratorSpec, LawDependence, Monomial,
};
use crate::error::{Error, Result};
use crate::measures::MeasureView;
use crate::paths::PathEnsemble;
use crate::solvers::Solution;

pub const FIXTURES: [&str; 6] = [
    "pure_quadratic",
    "linear_mf",
    "remark31",
    "eq41",
    "bounded_sine_mf",
    "volterra_demo",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalKind {
    /// `xi^i = W_T^{i mod d}`
    Brownian,
    /// `xi^i = sin(W_T^{i mod d})`
    Sine,
    /// `xi^i = |W_T^{i mod d}|`
    Abs,
    /// `xi^i = c`
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolterraKernelKind {
    Zero,
    One,
    /// `clamp(E[Y_s], -10, 10)`
    MeanClamp,
}

/// Optional knobs; anything unset takes the fixture default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureParams {
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub gamma: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub k: Option<f64>,
    pub terminal: Option<TerminalKind>,
    pub kernel: Option<VolterraKernelKind>,
}

/// `g(s, particle, Y iterate, law of Y_s, out)` for the Volterra term.
pub type KernelFn = dyn Fn(usize, usize, &Solution, &MeasureView, &mut [f64]) + Send + Sync;

#[derive(Clone)]
pub struct VolterraKernel {
    pub kind: VolterraKernelKind,
    pub eval: Arc<KernelFn>,
}

impl std::fmt::Debug for VolterraKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "VolterraKernel({:?})", self.kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Terminal {
    pub kind: TerminalKind,
    pub n: usize,
    pub d: usize,
    pub c: f64,
}

impl Terminal {
    /// `sup |xi|` if the terminal is bounded.
    pub fn bound(&self) -> Option<f64> {
        match self.kind {
            TerminalKind::Sine => Some(1.0),
            TerminalKind::Constant => Some(self.c.abs() * (self.n as f64).sqrt()),
            _ => None,
        }
    }

    pub fn eval(&self, w_t: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let w = w_t[i % self.d];
            *o = match self.kind {
                TerminalKind::Brownian => w,
                TerminalKind::Sine => w.sin(),
                TerminalKind::Abs => w.abs(),
                TerminalKind::Constant => self.c,
            };
        }
    }

    /// Terminal values of every particle, `N x n`.
    pub fn sample(&self, paths: &PathEnsemble) -> Result<Vec<f64>> {
        if paths.dim() != self.d {
            return Err(Error::ShapeMismatch(format!(
                "terminal expects d={}, ensemble has d={}",
                self.d,
                paths.dim()
            )));
        }
        let mut out = vec![0.0; paths.particles() * self.n];
        for (j, row) in out.chunks_mut(self.n).enumerate() {
            self.eval(paths.terminal_of(j), row);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: String,
    pub spec: GeneratorSpec,
    pub certificates: Certificates,
    pub terminal: Terminal,
    pub kernel: Option<VolterraKernel>,
    /// Parameters with every default filled in.
    pub params: FixtureParams,
}

fn row_sq(z: &[f64], i: usize, d: usize) -> f64 {
    z[i * d..(i + 1) * d].iter().map(|v| v * v).sum()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn reject(name: &str, key: &str) -> Error {
    Error::InvalidArgument(format!("fixture {name} does not take parameter `{key}`"))
}

fn only(name: &str, p: &FixtureParams, allowed: &[&str]) -> Result<()> {
    let set = [
        ("n", p.n.is_some()),
        ("d", p.d.is_some()),
        ("gamma", p.gamma.is_some()),
        ("a", p.a.is_some()),
        ("b", p.b.is_some()),
        ("c", p.c.is_some()),
        ("k", p.k.is_some()),
        ("terminal", p.terminal.is_some()),
        ("kernel", p.kernel.is_some()),
    ];
    for (key, present) in set {
        if present && !allowed.contains(&key) {
            return Err(reject(name, key));
        }
    }
    Ok(())
}

fn bounded_terminal(name: &str, kind: TerminalKind, allowed: &[TerminalKind]) -> Result<()> {
    if allowed.contains(&kind) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "fixture {name} needs a terminal in {allowed:?}, got {kind:?}"
        )))
    }
}

/// Build a registry fixture on horizon `horizon`.
pub fn fixture(name: &str, params: &FixtureParams, horizon: f64) -> Result<Fixture> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let f = match name {
        "pure_quadratic" => pure_quadratic(params)?,
        "linear_mf" => linear_mf(params)?,
        "remark31" => remark31(params, horizon)?,
        "eq41" => eq41(params, horizon)?,
        "bounded_sine_mf" => bounded_sine_mf(params, horizon)?,
        "volterra_demo" => volterra_demo(params)?,
        other => return Err(Error::UnknownFixture(other.to_string())),
    };
    let c = &f.certificates;
    if let Some(l) = &c.local {
        l.validate()?;
    }
    if let Some(g) = &c.global {
        g.validate()?;
    }
    if let Some(cv) = &c.convex {
        cv.validate(f.spec.n())?;
    }
    if let Some(v) = &c.volterra {
        v.validate()?;
    }
    Ok(f)
}

fn pure_quadratic(p: &FixtureParams) -> Result<Fixture> {
    only("pure_quadratic", p, &["n", "d", "gamma", "terminal", "c"])?;
    let n = p.n.unwrap_or(1);
    let d = p.d.unwrap_or(n);
    let gamma = p.gamma.unwrap_or(1.0);
    let kind = p.terminal.unwrap_or(TerminalKind::Brownian);
    let terminal = Terminal { kind, n, d, c: p.c.unwrap_or(0.0) };
    let spec = GeneratorSpec::new(n, d, true, LawDependence::None, move |i, _, _, z, _, _| {
        0.5 * gamma * row_sq(z, i, d)
    })?;
    let local = terminal.bound().map(|m1| CertificateLocal {
        gamma,
        lambda: 1.0,
        gamma0: 1.0,
        alpha: 0.0,
        m1,
        m2: 0.0,
        zeta: 0.0,
        psi: Monomial::ZERO,
        psi0: Monomial::ZERO,
    });
    Ok(Fixture {
        name: "pure_quadratic".into(),
        spec,
        certificates: Certificates {
            local,
            convex: Some(CertificateConvex {
                k: 0.0,
                gamma,
                zeta: 0.0,
                convexity: vec![if gamma >= 0.0 { Curvature::Convex } else { Curvature::Concave }; n],
            }),
            ..Default::default()
        },
        terminal,
        kernel: None,
        params: FixtureParams {
            n: Some(n),
            d: Some(d),
            gamma: Some(gamma),
            terminal: Some(kind),
            c: p.c,
            ..Default::default()
        },
    })
}

fn linear_mf(p: &FixtureParams) -> Result<Fixture> {
    only("linear_mf", p, &["a", "b", "c", "terminal"])?;
    let (a, b) = (p.a.unwrap_or(0.0), p.b.unwrap_or(1.0));
    let kind = p.terminal.unwrap_or(TerminalKind::Constant);
    bounded_terminal("linear_mf", kind, &[TerminalKind::Constant, TerminalKind::Brownian])?;
    let c = p.c.unwrap_or(1.0);
    let spec = GeneratorSpec::new(1, 1, true, LawDependence::YOnly, move |_, _, y, _, law, _| {
        a * y[0] + b * law.mean_y(0)
    })?;
    Ok(Fixture {
        name: "linear_mf".into(),
        spec,
        certificates: Certificates {
            convex: Some(CertificateConvex {
                k: a.abs() + b.abs(),
                gamma: 1.0,
                zeta: 0.0,
                convexity: vec![Curvature::Convex],
            }),
            ..Default::default()
        },
        terminal: Terminal { kind, n: 1, d: 1, c },
        kernel: None,
        params: FixtureParams {
            a: Some(a),
            b: Some(b),
            c: Some(c),
            terminal: Some(kind),
            ..Default::default()
        },
    })
}

fn remark31(p: &FixtureParams, horizon: f64) -> Result<Fixture> {
    only("remark31", p, &["n", "d", "terminal"])?;
    let n = p.n.unwrap_or(2);
    let d = p.d.unwrap_or(n);
    let kind = p.terminal.unwrap_or(TerminalKind::Sine);
    bounded_terminal("remark31", kind, &[TerminalKind::Sine])?;
    let spec = GeneratorSpec::new(n, d, true, LawDependence::Joint, move |i, _, y, z, law, _| {
        let y2: f64 = y.iter().map(|v| v * v).sum();
        let zi = row_sq(z, i, d).sqrt();
        let zn = norm(z);
        let (w1, w2) = (law.w2_y(), law.w2_z());
        (y2 + zi.sin()) * zn + zn.powf(4.0 / 3.0) + zi * zi + w1.powi(3) * w2.cos() + w2.powf(4.0 / 3.0)
    })?;
    let nf = n as f64;
    let cbrt_n = nf.cbrt();
    let zeta = 0.5 + (nf - 1.0) + cbrt_n;
    let local = CertificateLocal {
        gamma: 4.0 + 2.0 * cbrt_n,
        lambda: 1.75 + cbrt_n,
        gamma0: 1.0,
        alpha: 1.0 / 3.0,
        m1: 1.0,
        m2: zeta * horizon,
        zeta,
        psi: Monomial { c0: 0.25, c1: nf / 4.0, r: 8.0 },
        psi0: Monomial { c0: 0.0, c1: 1.0, r: 3.0 },
    };
    Ok(Fixture {
        name: "remark31".into(),
        spec,
        certificates: Certificates {
            local: Some(local),
            ..Default::default()
        },
        terminal: Terminal { kind, n, d, c: 0.0 },
        kernel: None,
        params: FixtureParams {
            n: Some(n),
            d: Some(d),
            terminal: Some(kind),
            ..Default::default()
        },
    })
}

fn eq41(p: &FixtureParams, horizon: f64) -> Result<Fixture> {
    only("eq41", p, &["n", "d", "terminal"])?;
    let n = p.n.unwrap_or(2);
    let d = p.d.unwrap_or(n);
    let kind = p.terminal.unwrap_or(TerminalKind::Sine);
    bounded_terminal("eq41", kind, &[TerminalKind::Sine])?;
    let spec = GeneratorSpec::new(n, d, true, LawDependence::Joint, move |i, _, y, z, law, _| {
        let cross: f64 = (0..n).filter(|&j| j != i).map(|j| row_sq(z, j, d).sqrt().sin()).sum();
        1.0 + norm(y) + row_sq(z, i, d) + cross + law.w2_y() * law.w2_z().cos()
    })?;
    let nf = n as f64;
    Ok(Fixture {
        name: "eq41".into(),
        spec,
        certificates: Certificates {
            global: Some(CertificateGlobal {
                l: 1.0,
                gamma: 2.0,
                m1: 1.0,
                m3: nf * nf * horizon,
                zeta: nf,
                psi: Monomial { c0: 1.0, c1: 0.0, r: 1.0 },
            }),
            local: Some(CertificateLocal {
                gamma: 2.0,
                lambda: 1.0,
                gamma0: 1.0,
                alpha: 0.0,
                m1: 1.0,
                m2: nf * horizon,
                zeta: nf,
                psi: Monomial::linear(1.0),
                psi0: Monomial::linear(1.0),
            }),
            ..Default::default()
        },
        terminal: Terminal { kind, n, d, c: 0.0 },
        kernel: None,
        params: FixtureParams {
            n: Some(n),
            d: Some(d),
            terminal: Some(kind),
            ..Default::default()
        },
    })
}

fn bounded_sine_mf(p: &FixtureParams, horizon: f64) -> Result<Fixture> {
    only("bounded_sine_mf", p, &["n", "d", "gamma", "k", "terminal"])?;
    let n = p.n.unwrap_or(1);
    let d = p.d.unwrap_or(n);
    let gamma = p.gamma.unwrap_or(1.0);
    let k = p.k.unwrap_or(0.5);
    if !(k > 0.0) {
        return Err(Error::InvalidArgument(format!("bounded_sine_mf needs k > 0, got {k}")));
    }
    let kind = p.terminal.unwrap_or(TerminalKind::Sine);
    bounded_terminal("bounded_sine_mf", kind, &[TerminalKind::Sine, TerminalKind::Brownian])?;
    let terminal = Terminal { kind, n, d, c: 0.0 };
    let spec = GeneratorSpec::new(n, d, true, LawDependence::YOnly, move |i, _, y, z, law, _| {
        0.5 * gamma * row_sq(z, i, d) + k * y[i].sin() + k * law.mean_y(i).sin()
    })?;
    let global = terminal.bound().map(|m1| CertificateGlobal {
        l: k,
        gamma,
        m1,
        m3: 4.0 * k * k * horizon,
        zeta: 2.0 * k,
        psi: Monomial { c0: 1.0, c1: 0.0, r: 1.0 },
    });
    Ok(Fixture {
        name: "bounded_sine_mf".into(),
        spec,
        certificates: Certificates {
            global,
            convex: Some(CertificateConvex {
                k,
                gamma,
                zeta: 2.0 * k,
                convexity: vec![Curvature::Convex; n],
            }),
            ..Default::default()
        },
        terminal,
        kernel: None,
        params: FixtureParams {
            n: Some(n),
            d: Some(d),
            gamma: Some(gamma),
            k: Some(k),
            terminal: Some(kind),
            ..Default::default()
        },
    })
}

fn volterra_demo(p: &FixtureParams) -> Result<Fixture> {
    only("volterra_demo", p, &["gamma", "terminal", "kernel"])?;
    let gamma = p.gamma.unwrap_or(1.0);
    let kind = p.terminal.unwrap_or(TerminalKind::Brownian);
    let kernel_kind = p.kernel.unwrap_or(VolterraKernelKind::MeanClamp);
    let spec = GeneratorSpec::new(1, 1, true, LawDependence::None, move |_, _, _, z, _, _| {
        0.5 * gamma * z[0] * z[0]
    })?;
    let (eval, c): (Arc<KernelFn>, f64) = match kernel_kind {
        VolterraKernelKind::Zero => (Arc::new(|_, _, _, _, out: &mut [f64]| out.fill(0.0)), 0.0),
        VolterraKernelKind::One => (Arc::new(|_, _, _, _, out: &mut [f64]| out.fill(1.0)), 1.0),
        VolterraKernelKind::MeanClamp => (
            Arc::new(|_, _, _, law: &MeasureView, out: &mut [f64]| {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = law.mean_y(i).clamp(-10.0, 10.0);
                }
            }),
            10.0,
        ),
    };
    Ok(Fixture {
        name: "volterra_demo".into(),
        spec,
        certificates: Certificates {
            convex: Some(CertificateConvex {
                k: 0.0,
                gamma,
                zeta: 0.0,
                convexity: vec![Curvature::Convex],
            }),
            volterra: Some(CertificateVolterra {
                c,
                bounded_g: true,
                gamma,
            }),
            ..Default::default()
        },
        terminal: Terminal { kind, n: 1, d: 1, c: 0.0 },
        kernel: Some(VolterraKernel { kind: kernel_kind, eval }),
        params: FixtureParams {
            gamma: Some(gamma),
            terminal: Some(kind),
            kernel: Some(kernel_kind),
            ..Default::default()
        },
    })
}
