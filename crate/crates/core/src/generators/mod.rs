//! Drivers, assumption certificates and the fixture registry.

mod audit;
mod fixtures;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::MeasureView;

pub use audit::{check_growth, check_growth_in, CertificateRef, GrowthReport, Violation};
pub use fixtures::{fixture, Fixture, FixtureParams, KernelFn, Terminal, TerminalKind, VolterraKernel, VolterraKernelKind, FIXTURES};

/// Component `i` of a driver: `(i, t, y, z, law, aux) -> f^i`, with `y` of
/// length `n` and `z` the row-major `n x d` matrix.
pub type ComponentFn = dyn Fn(usize, f64, &[f64], &[f64], &MeasureView, &[f64]) -> f64 + Send + Sync;

/// Which part of the joint law a driver reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawDependence {
    Joint,
    YOnly,
    None,
}

#[derive(Clone)]
pub struct GeneratorSpec {
    n: usize,
    d: usize,
    diagonal: bool,
    law_dependence: LawDependence,
    component: Arc<ComponentFn>,
}

impl fmt::Debug for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneratorSpec")
            .field("n", &self.n)
            .field("d", &self.d)
            .field("diagonal", &self.diagonal)
            .field("law_dependence", &self.law_dependence)
            .finish_non_exhaustive()
    }
}

impl GeneratorSpec {
    pub fn new(
        n: usize,
        d: usize,
        diagonal: bool,
        law_dependence: LawDependence,
        component: impl Fn(usize, f64, &[f64], &[f64], &MeasureView, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidArgument(format!("need n, d >= 1, got n={n}, d={d}")));
        }
        Ok(GeneratorSpec {
            n,
            d,
            diagonal,
            law_dependence,
            component: Arc::new(component),
        })
    }

    /// The zero driver.
    pub fn zero(n: usize, d: usize) -> Result<Self> {
        Self::new(n, d, true, LawDependence::None, |_, _, _, _, _, _| 0.0)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    pub fn law_dependence(&self) -> LawDependence {
        self.law_dependence
    }

    pub fn component(&self, i: usize, t: f64, y: &[f64], z: &[f64], law: &MeasureView, aux: &[f64]) -> f64 {
        (self.component)(i, t, y, z, law, aux)
    }

    pub fn evaluate(&self, t: f64, y: &[f64], z: &[f64], law: &MeasureView, aux: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.n || z.len() != self.n * self.d {
            return Err(Error::ShapeMismatch(format!(
                "driver expects y in R^{} and z in R^{}x{}, got {} and {}",
                self.n,
                self.n,
                self.d,
                y.len(),
                z.len()
            )));
        }
        Ok((0..self.n).map(|i| self.component(i, t, y, z, law, aux)).collect())
    }
}

/// `z_row -> f^i(t, U, V with row i replaced by z_row, law)`.
pub struct FrozenDriver<'a> {
    spec: &'a GeneratorSpec,
    i: usize,
    u: &'a [f64],
    v: Vec<f64>,
    law: &'a MeasureView,
    aux: &'a [f64],
}

pub fn freeze_rows<'a>(
    spec: &'a GeneratorSpec,
    i: usize,
    u: &'a [f64],
    v: &[f64],
    law: &'a MeasureView,
) -> Result<FrozenDriver<'a>> {
    if i >= spec.n {
        return Err(Error::IndexOutOfRange { index: i, max: spec.n - 1 });
    }
    if u.len() != spec.n || v.len() != spec.n * spec.d {
        return Err(Error::ShapeMismatch(format!(
            "frozen inputs have lengths {} and {}, expected {} and {}",
            u.len(),
            v.len(),
            spec.n,
            spec.n * spec.d
        )));
    }
    Ok(FrozenDriver {
        spec,
        i,
        u,
        v: v.to_vec(),
        law,
        aux: &[],
    })
}

impl<'a> FrozenDriver<'a> {
    pub fn component(&self) -> usize {
        self.i
    }

    pub fn with_aux(mut self, aux: &'a [f64]) -> Self {
        self.aux = aux;
        self
    }

    /// Re-point the frozen inputs at another particle without reallocating.
    pub fn rebind(&mut self, u: &'a [f64], v: &[f64], aux: &'a [f64]) {
        self.u = u;
        self.v.copy_from_slice(v);
        self.aux = aux;
    }

    pub fn rebind_law(&mut self, law: &'a MeasureView) {
        self.law = law;
    }

    /// Overwrite row `j != i` of the frozen `V` (used to clip it).
    pub fn frozen_row_mut(&mut self, j: usize) -> &mut [f64] {
        let d = self.spec.d;
        &mut self.v[j * d..(j + 1) * d]
    }

    pub fn eval(&mut self, t: f64, z_row: &[f64]) -> f64 {
        let d = self.spec.d;
        // row i of V never reaches the driver, so it doubles as scratch
        self.v[self.i * d..(self.i + 1) * d].copy_from_slice(z_row);
        self.spec.component(self.i, t, self.u, &self.v, self.law, self.aux)
    }
}

/// `c0 + c1 * x^r` on `x >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub c0: f64,
    pub c1: f64,
    pub r: f64,
}

impl Monomial {
    pub const ZERO: Monomial = Monomial { c0: 0.0, c1: 0.0, r: 1.0 };

    pub fn linear(c1: f64) -> Monomial {
        Monomial { c0: 0.0, c1, r: 1.0 }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.c0 + self.c1 * x.abs().powf(self.r)
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.c0 >= 0.0 && self.c1 >= 0.0 && self.r >= 1.0) || !(self.c0 + self.c1 + self.r).is_finite() {
            return Err(Error::InvalidArgument(format!(
                "{what} must have c0, c1 >= 0 and r >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")))
    }
}

fn nonnegative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be nonnegative and finite, got {v}")))
    }
}

/// Growth and continuity data for the local theory on bounded terminals.
/// `zeta` is the constant level of the free term, `m2` bounds its integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateLocal {
    pub gamma: f64,
    pub lambda: f64,
    pub gamma0: f64,
    pub alpha: f64,
    pub m1: f64,
    pub m2: f64,
    pub zeta: f64,
    pub psi: Monomial,
    pub psi0: Monomial,
}

impl CertificateLocal {
    pub fn validate(&self) -> Result<()> {
        positive("gamma", self.gamma)?;
        positive("lambda", self.lambda)?;
        positive("gamma0", self.gamma0)?;
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        nonnegative("m1", self.m1)?;
        nonnegative("m2", self.m2)?;
        nonnegative("zeta", self.zeta)?;
        self.psi.validate("psi")?;
        self.psi0.validate("psi0")
    }
}

/// Linear-in-`y` growth data for the global theory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateGlobal {
    pub l: f64,
    pub gamma: f64,
    pub m1: f64,
    pub m3: f64,
    pub zeta: f64,
    pub psi: Monomial,
}

impl CertificateGlobal {
    pub fn validate(&self) -> Result<()> {
        positive("L", self.l)?;
        positive("gamma", self.gamma)?;
        nonnegative("m1", self.m1)?;
        nonnegative("m3", self.m3)?;
        nonnegative("zeta", self.zeta)?;
        self.psi.validate("psi")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Curvature {
    Convex,
    Concave,
}

/// Data for unbounded terminals with exponential moments. `k = 0` is legal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateConvex {
    pub k: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub convexity: Vec<Curvature>,
}

impl CertificateConvex {
    pub fn validate(&self, n: usize) -> Result<()> {
        nonnegative("K", self.k)?;
        positive("gamma", self.gamma)?;
        nonnegative("zeta", self.zeta)?;
        if self.convexity.len() != n {
            return Err(Error::InvalidArgument(format!(
                "convexity flags given for {} of {n} components",
                self.convexity.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateVolterra {
    pub c: f64,
    pub bounded_g: bool,
    pub gamma: f64,
}

impl CertificateVolterra {
    pub fn validate(&self) -> Result<()> {
        nonnegative("C", self.c)?;
        positive("gamma", self.gamma)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Certificates {
    pub local: Option<CertificateLocal>,
    pub global: Option<CertificateGlobal>,
    pub convex: Option<CertificateConvex>,
    pub volterra: Option<CertificateVolterra>,
}
