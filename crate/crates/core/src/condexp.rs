//! Least-squares Monte Carlo conditional expectations.
//!
//! `E[V | state]` is approximated by the least-squares fit of `V` on a basis
//! of the state, evaluated back at every particle. Polynomial bases work on
//! standardized coordinates (same span, better conditioning); coordinates
//! that are constant across particles (e.g. `W_0 = 0`) are dropped since the
//! intercept already spans them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::PathEnsemble;

/// Relative ridge penalty used when the normal equations are singular.
pub const RIDGE_PENALTY: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressionBasis {
    /// All monomials of total degree `<= degree`, intercept included.
    Polynomial { degree: usize },
    /// Indicators of a tensor grid with `bins` equal-width cells per
    /// standardized coordinate on `[-3, 3]` (outer cells unbounded).
    PiecewiseConstant { bins: usize },
}

impl Default for RegressionBasis {
    fn default() -> Self {
        RegressionBasis::Polynomial { degree: 3 }
    }
}

fn exponents(dim: usize, degree: usize) -> Vec<Vec<usize>> {
    fn rec(dim: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == dim {
            out.push(cur.clone());
            return;
        }
        for e in 0..=left {
            cur.push(e);
            rec(dim, left - e, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, degree, &mut Vec::with_capacity(dim), &mut out);
    out.sort_by_key(|e| e.iter().sum::<usize>());
    out
}

/// Number of basis functions for a `dim`-dimensional state.
pub fn basis_size(basis: &RegressionBasis, dim: usize) -> usize {
    match *basis {
        RegressionBasis::Polynomial { degree } => exponents(dim, degree).len(),
        RegressionBasis::PiecewiseConstant { bins } => bins.pow(dim as u32),
    }
}

#[derive(Debug, Clone)]
enum Design {
    Polynomial {
        /// column-major `N x p`
        columns: Vec<Vec<f64>>,
        gram: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    },
    Cells {
        cell: Vec<usize>,
        counts: Vec<usize>,
    },
}

/// Regression design at one fixed state, reusable for any number of
/// right-hand sides.
#[derive(Debug, Clone)]
pub struct Projector {
    particles: usize,
    design: Design,
    ridge_fallback: bool,
}

fn standardize(state: &[f64], dim: usize, particles: usize) -> Vec<Vec<f64>> {
    let mut kept = Vec::new();
    for l in 0..dim {
        let col: Vec<f64> = (0..particles).map(|j| state[j * dim + l]).collect();
        let mean = col.iter().sum::<f64>() / particles as f64;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / particles as f64;
        let sd = var.sqrt();
        if sd == 0.0 || sd <= 1e-13 * mean.abs() {
            continue;
        }
        kept.push(col.iter().map(|x| (x - mean) / sd).collect());
    }
    kept
}

impl Projector {
    /// `state` is `N x dim`, row-major.
    pub fn new(state: &[f64], dim: usize, basis: &RegressionBasis) -> Result<Projector> {
        if dim == 0 || state.is_empty() || state.len() % dim != 0 {
            return Err(Error::ShapeMismatch(format!(
                "state of length {} is not N x {dim}",
                state.len()
            )));
        }
        if let Some(pos) = state.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite state entry at {pos}")));
        }
        let particles = state.len() / dim;
        let coords = standardize(state, dim, particles);
        match *basis {
            RegressionBasis::Polynomial { degree } => {
                let full = basis_size(basis, dim);
                if particles <= full {
                    return Err(Error::InvalidArgument(format!(
                        "need more particles ({particles}) than basis functions ({full})"
                    )));
                }
                let exps = exponents(coords.len(), degree);
                let columns: Vec<Vec<f64>> = exps
                    .iter()
                    .map(|e| {
                        (0..particles)
                            .map(|j| {
                                e.iter()
                                    .zip(&coords)
                                    .map(|(&p, c)| c[j].powi(p as i32))
                                    .product::<f64>()
                            })
                            .collect()
                    })
                    .collect();
                let p = columns.len();
                let mut gram = DMatrix::<f64>::zeros(p, p);
                for a in 0..p {
                    for b in a..p {
                        let s: f64 = columns[a].iter().zip(&columns[b]).map(|(x, y)| x * y).sum();
                        gram[(a, b)] = s;
                        gram[(b, a)] = s;
                    }
                }
                let (chol, ridge_fallback) = factor(gram)?;
                Ok(Projector {
                    particles,
                    design: Design::Polynomial { columns, gram: chol },
                    ridge_fallback,
                })
            }
            RegressionBasis::PiecewiseConstant { bins } => {
                if bins == 0 {
                    return Err(Error::InvalidArgument("need at least one bin".into()));
                }
                let width = 6.0 / bins as f64;
                let mut cell = vec![0usize; particles];
                for (j, c) in cell.iter_mut().enumerate() {
                    let mut idx = 0usize;
                    for col in &coords {
                        let b = (((col[j] + 3.0) / width).floor().max(0.0) as usize).min(bins - 1);
                        idx = idx * bins + b;
                    }
                    *c = idx;
                }
                let ncells = bins.pow(coords.len() as u32);
                let mut counts = vec![0usize; ncells];
                for &c in &cell {
                    counts[c] += 1;
                }
                Ok(Projector {
                    particles,
                    design: Design::Cells { cell, counts },
                    ridge_fallback: false,
                })
            }
        }
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    /// Whether the normal equations needed the ridge penalty.
    pub fn ridge_fallback(&self) -> bool {
        self.ridge_fallback
    }

    /// Fitted values of the least-squares projection of `values`.
    pub fn project(&self, values: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.particles];
        self.project_into(values, &mut out)?;
        Ok(out)
    }

    pub fn project_into(&self, values: &[f64], out: &mut [f64]) -> Result<()> {
        if values.len() != self.particles || out.len() != self.particles {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values, got {}",
                self.particles,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at particle {pos}")));
        }
        match &self.design {
            Design::Polynomial { columns, gram } => {
                let rhs = DVector::from_iterator(
                    columns.len(),
                    columns.iter().map(|c| c.iter().zip(values).map(|(x, v)| x * v).sum::<f64>()),
                );
                let beta = gram.solve(&rhs);
                out.fill(0.0);
                for (c, b) in columns.iter().zip(beta.iter()) {
                    for (o, x) in out.iter_mut().zip(c) {
                        *o += b * x;
                    }
                }
            }
            Design::Cells { cell, counts } => {
                let mut sums = vec![0.0; counts.len()];
                for (&c, v) in cell.iter().zip(values) {
                    sums[c] += v;
                }
                for (o, &c) in out.iter_mut().zip(cell) {
                    *o = sums[c] / counts[c] as f64;
                }
            }
        }
        Ok(())
    }

    /// Componentwise projection of `values * increments^T / dt`; the result
    /// is `N x d` row-major.
    pub fn project_increment(&self, values: &[f64], increments: &[f64], dt: f64) -> Result<Vec<f64>> {
        let n = self.particles;
        if increments.len() % n != 0 || increments.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "increments of length {} for {n} particles",
                increments.len()
            )));
        }
        let d = increments.len() / n;
        let mut out = vec![0.0; n * d];
        let mut col = vec![0.0; n];
        let mut fit = vec![0.0; n];
        for l in 0..d {
            for j in 0..n {
                col[j] = values[j] * increments[j * d + l] / dt;
            }
            self.project_into(&col, &mut fit)?;
            for j in 0..n {
                out[j * d + l] = fit[j];
            }
        }
        Ok(out)
    }
}

fn factor(gram: DMatrix<f64>) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, bool)> {
    let p = gram.nrows();
    let max_diag = (0..p).map(|a| gram[(a, a)]).fold(0.0, f64::max);
    if let Some(ch) = gram.clone().cholesky() {
        let l = ch.l_dirty();
        let min_pivot = (0..p).map(|a| l[(a, a)] * l[(a, a)]).fold(f64::INFINITY, f64::min);
        if min_pivot > 1e-13 * max_diag {
            return Ok((ch, false));
        }
    }
    let trace: f64 = (0..p).map(|a| gram[(a, a)]).sum();
    let mut ridged = gram;
    let pen = RIDGE_PENALTY * trace / p as f64;
    for a in 0..p {
        ridged[(a, a)] += pen;
    }
    let ch = ridged
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("regression design is degenerate even with ridge".into()))?;
    Ok((ch, true))
}

/// One-shot projection: builds the design for `state` (`N x dim`) and fits `values`.
pub fn project(values: &[f64], state: &[f64], dim: usize, basis: &RegressionBasis) -> Result<Vec<f64>> {
    Projector::new(state, dim, basis)?.project(values)
}

/// One-shot `E[values * dW^T | state] / dt`.
pub fn project_increment(
    values: &[f64],
    state: &[f64],
    dim: usize,
    increments: &[f64],
    dt: f64,
    basis: &RegressionBasis,
) -> Result<Vec<f64>> {
    Projector::new(state, dim, basis)?.project_increment(values, increments, dt)
}

/// Conditional expectations at every grid node of an ensemble, with the
/// designs factored once.
#[derive(Debug, Clone)]
pub struct Engine {
    basis: RegressionBasis,
    nodes: Vec<Projector>,
}

impl Engine {
    /// State at node `k` is `W_{t_k}`.
    pub fn new(paths: &PathEnsemble, basis: RegressionBasis) -> Result<Engine> {
        let m = paths.grid().steps();
        let nodes = (0..=m)
            .map(|k| Projector::new(paths.position_unchecked(k), paths.dim(), &basis))
            .collect::<Result<Vec<_>>>()?;
        Ok(Engine { basis, nodes })
    }

    /// User-declared state map: `map(k, W_{t_k} row of particle j)` returns
    /// the `state_dim` regression coordinates of that particle.
    pub fn with_state_map(
        paths: &PathEnsemble,
        basis: RegressionBasis,
        state_dim: usize,
        map: impl Fn(usize, &[f64]) -> Vec<f64>,
    ) -> Result<Engine> {
        let m = paths.grid().steps();
        let d = paths.dim();
        let mut nodes = Vec::with_capacity(m + 1);
        for k in 0..=m {
            let w = paths.position_unchecked(k);
            let mut state = Vec::with_capacity(paths.particles() * state_dim);
            for j in 0..paths.particles() {
                let s = map(k, &w[j * d..(j + 1) * d]);
                if s.len() != state_dim {
                    return Err(Error::ShapeMismatch(format!(
                        "state map returned {} coordinates, expected {state_dim}",
                        s.len()
                    )));
                }
                state.extend(s);
            }
            nodes.push(Projector::new(&state, state_dim, &basis)?);
        }
        Ok(Engine { basis, nodes })
    }

    pub fn basis(&self) -> &RegressionBasis {
        &self.basis
    }

    pub fn node(&self, k: usize) -> Result<&Projector> {
        self.nodes.get(k).ok_or(Error::IndexOutOfRange {
            index: k,
            max: self.nodes.len() - 1,
        })
    }

    pub fn ridge_fallbacks(&self) -> usize {
        self.nodes.iter().filter(|p| p.ridge_fallback).count()
    }
}
