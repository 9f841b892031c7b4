//! Backward schemes: the scalar engine, the frozen-input Picard map and the
//! local, global, theta and Volterra drivers built on it.

mod global;
mod local;
mod scalar;
mod theta;
mod volterra;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::condexp::Engine;
use crate::constants::ser_f64;
use crate::error::{Error, Result};
use crate::generators::{freeze_rows, Fixture, GeneratorSpec, LawDependence};
use crate::measures::{ExpMoment, MeasureView, ParticleCloud};
use crate::paths::{PathEnsemble, TimeGrid};

pub use global::{solve_global, GlobalReport, WindowRecord};
pub use local::solve_local;
pub use scalar::{solve_scalar, ScalarOptions, ScalarOutput};
pub use theta::solve_theta;
pub use volterra::{solve_volterra, VolterraRecord, VolterraTrace};

/// Discrete `(Y, Z)` on the nodes `first..=last` of a grid.
///
/// `Y` has `last - first + 1` nodes laid out `(k, j, i)`; `Z` has
/// `last - first` nodes laid out `(k, j, i, l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    grid: TimeGrid,
    first: usize,
    last: usize,
    particles: usize,
    n: usize,
    d: usize,
    seed: u64,
    y: Vec<f64>,
    z: Vec<f64>,
}

impl Solution {
    pub fn zeros(grid: TimeGrid, particles: usize, n: usize, d: usize, seed: u64) -> Self {
        Self::window(grid, 0, grid.steps(), particles, n, d, seed)
    }

    /// Zero solution on the nodes `first..=last`.
    pub fn window(grid: TimeGrid, first: usize, last: usize, particles: usize, n: usize, d: usize, seed: u64) -> Self {
        assert!(first < last && last <= grid.steps(), "bad window {first}..={last}");
        let nodes = last - first;
        Solution {
            grid,
            first,
            last,
            particles,
            n,
            d,
            seed,
            y: vec![0.0; (nodes + 1) * particles * n],
            z: vec![0.0; nodes * particles * n * d],
        }
    }

    /// `Y = level + offset` on every node before `last`, `Y_last = level`, `Z = 0`.
    pub fn flat(
        grid: TimeGrid,
        first: usize,
        last: usize,
        level: &[f64],
        n: usize,
        d: usize,
        offset: f64,
        seed: u64,
    ) -> Result<Self> {
        if level.is_empty() || level.len() % n != 0 {
            return Err(Error::ShapeMismatch(format!("level of length {} is not N x {n}", level.len())));
        }
        let particles = level.len() / n;
        let mut s = Self::window(grid, first, last, particles, n, d, seed);
        for k in first..last {
            for (y, l) in s.y_node_mut(k).iter_mut().zip(level) {
                *y = l + offset;
            }
        }
        s.y_node_mut(last).copy_from_slice(level);
        Ok(s)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn first_node(&self) -> usize {
        self.first
    }

    pub fn last_node(&self) -> usize {
        self.last
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn y_range(&self, k: usize) -> std::ops::Range<usize> {
        assert!(k >= self.first && k <= self.last, "node {k} outside {}..={}", self.first, self.last);
        let row = self.particles * self.n;
        (k - self.first) * row..(k - self.first + 1) * row
    }

    fn z_range(&self, k: usize) -> std::ops::Range<usize> {
        assert!(k >= self.first && k < self.last, "Z node {k} outside {}..{}", self.first, self.last);
        let row = self.particles * self.n * self.d;
        (k - self.first) * row..(k - self.first + 1) * row
    }

    /// `Y_{t_k}`, `N x n`.
    pub fn y_node(&self, k: usize) -> &[f64] {
        &self.y[self.y_range(k)]
    }

    pub fn y_node_mut(&mut self, k: usize) -> &mut [f64] {
        let r = self.y_range(k);
        &mut self.y[r]
    }

    /// `Z_{t_k}`, `N x n x d`, for `k < last`.
    pub fn z_node(&self, k: usize) -> &[f64] {
        &self.z[self.z_range(k)]
    }

    pub fn z_node_mut(&mut self, k: usize) -> &mut [f64] {
        let r = self.z_range(k);
        &mut self.z[r]
    }

    pub fn y_of(&self, k: usize, j: usize) -> &[f64] {
        &self.y_node(k)[j * self.n..(j + 1) * self.n]
    }

    pub fn z_of(&self, k: usize, j: usize) -> &[f64] {
        let m = self.n * self.d;
        &self.z_node(k)[j * m..(j + 1) * m]
    }

    /// Component `i` of `Y_{t_k}` across particles.
    pub fn y_column(&self, k: usize, i: usize) -> Vec<f64> {
        self.y_node(k).iter().skip(i).step_by(self.n).copied().collect()
    }

    /// Particle mean of `Y^i_{t_first}`.
    pub fn y_start_mean(&self) -> Vec<f64> {
        let node = self.y_node(self.first);
        (0..self.n)
            .map(|i| node.iter().skip(i).step_by(self.n).sum::<f64>() / self.particles as f64)
            .collect()
    }

    pub fn y_values(&self) -> &[f64] {
        &self.y
    }

    pub fn z_values(&self) -> &[f64] {
        &self.z
    }

    pub fn max_abs_y(&self) -> f64 {
        self.y.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Copy the nodes of `part` (a window on the same grid) into `self`.
    pub fn paste(&mut self, part: &Solution) {
        for k in part.first..=part.last {
            self.y_node_mut(k).copy_from_slice(part.y_node(k));
        }
        for k in part.first..part.last {
            self.z_node_mut(k).copy_from_slice(part.z_node(k));
        }
    }

    /// Restriction to the nodes `first..=last`.
    pub fn slice(&self, first: usize, last: usize) -> Solution {
        let mut s = Solution::window(self.grid, first, last, self.particles, self.n, self.d, self.seed);
        for k in first..=last {
            s.y_node_mut(k).copy_from_slice(self.y_node(k));
        }
        for k in first..last {
            s.z_node_mut(k).copy_from_slice(self.z_node(k));
        }
        s
    }

    /// Little-endian dump: header `N, M, n, d, seed, first, last` as `u64`,
    /// `T` as `f64`, then `Y` and `Z` as `f64` in storage order.
    pub fn dump<W: Write>(&self, mut out: W) -> Result<()> {
        for h in [
            self.particles as u64,
            self.grid.steps() as u64,
            self.n as u64,
            self.d as u64,
            self.seed,
            self.first as u64,
            self.last as u64,
        ] {
            out.write_all(&h.to_le_bytes())?;
        }
        out.write_all(&self.grid.horizon().to_le_bytes())?;
        for v in self.y.iter().chain(&self.z) {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load<R: Read>(mut input: R) -> Result<Solution> {
        let mut b = [0u8; 8];
        let mut h = [0u64; 7];
        for v in h.iter_mut() {
            input.read_exact(&mut b)?;
            *v = u64::from_le_bytes(b);
        }
        input.read_exact(&mut b)?;
        let grid = crate::paths::build_grid(f64::from_le_bytes(b), h[1] as usize)?;
        let (first, last) = (h[5] as usize, h[6] as usize);
        if first >= last || last > grid.steps() {
            return Err(Error::Io(format!("corrupt window {first}..={last}")));
        }
        let mut s = Solution::window(grid, first, last, h[0] as usize, h[2] as usize, h[3] as usize, h[4]);
        for v in s.y.iter_mut().chain(s.z.iter_mut()) {
            input.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LawTiming {
    /// Law of the frozen input, as in the Picard schemes.
    #[default]
    Lagged,
    /// Law of the freshly computed iterate (one extra map evaluation).
    Refreshed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Radius for clipping `Z` rows fed to drivers; `None` derives it from
    /// the certificate (`4 sqrt(K2)`) or disables clipping.
    pub z_clip: Option<f64>,
    pub inner_sweeps: usize,
    /// Weight of the current node in the driver quadrature: 1 is implicit
    /// Euler in the frozen inputs, 0.5 the trapezoid rule.
    pub time_theta: f64,
    /// Constant added to the initial Picard iterate.
    pub init_offset: f64,
    pub law_timing: LawTiming,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-6,
            max_iter: 50,
            z_clip: None,
            inner_sweeps: 1,
            time_theta: 0.5,
            init_offset: 0.0,
            law_timing: LawTiming::Lagged,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be nonnegative, got {}", self.tol)));
        }
        if self.max_iter == 0 || self.inner_sweeps == 0 {
            return Err(Error::InvalidArgument("max_iter and inner_sweeps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.time_theta) {
            return Err(Error::InvalidArgument(format!(
                "time_theta must lie in [0, 1], got {}",
                self.time_theta
            )));
        }
        if let Some(c) = self.z_clip {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("z_clip must be positive, got {c}")));
            }
        }
        if !self.init_offset.is_finite() {
            return Err(Error::InvalidArgument("init_offset must be finite".into()));
        }
        Ok(())
    }

    fn scalar(&self, z_clip: f64) -> ScalarOptions {
        ScalarOptions {
            z_clip,
            inner_sweeps: self.inner_sweeps,
            time_theta: self.time_theta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardRecord {
    pub iteration: usize,
    /// `max |Y_new - Y_old|` over nodes and particles.
    pub sup_dy: f64,
    /// BMO estimate of `Z_new - Z_old`.
    pub bmo_dz: f64,
    pub combined: f64,
    #[serde(serialize_with = "ser_opt")]
    pub ratio: Option<f64>,
    /// Largest Euclidean `|Y|`.
    pub max_y: f64,
    pub bmo_z: f64,
    /// `max|Y| <= K1` and `bmo(Z)^2 <= K2` (5% slack), when the radii are known.
    pub in_ball: Option<bool>,
    pub clip_events: usize,
    /// `E exp(q gamma sup_t |Y_t|)` at `q = 1, 2`.
    pub exp_moments: Vec<ExpMoment>,
}

fn ser_opt<S: serde::Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => ser_f64(x, s),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PicardTrace {
    pub records: Vec<PicardRecord>,
    pub converged: bool,
    #[serde(serialize_with = "ser_f64")]
    pub z_clip: f64,
}

impl PicardTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn differences(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.combined).collect()
    }

    pub fn clip_events(&self) -> usize {
        self.records.iter().map(|r| r.clip_events).sum()
    }
}

/// Empirical law at node `k` of `src`, as read by `spec`. `Z` is taken at
/// `min(k, last - 1)`.
fn law_at(spec: &GeneratorSpec, src: &Solution, k: usize) -> Result<MeasureView> {
    let (n, d) = (spec.n(), spec.d());
    Ok(match spec.law_dependence() {
        LawDependence::None => MeasureView::dirac(n),
        LawDependence::YOnly => MeasureView::from_y(ParticleCloud::new(n, src.y_node(k).to_vec())?)?,
        LawDependence::Joint => {
            let kz = k.min(src.last - 1);
            MeasureView::new(
                ParticleCloud::new(n, src.y_node(k).to_vec())?,
                ParticleCloud::new(n * d, src.z_node(kz).to_vec())?,
            )?
        }
    })
}

fn clip_row(row: &mut [f64], radius: f64) -> bool {
    if !radius.is_finite() {
        return false;
    }
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > radius {
        let s = radius / norm;
        row.iter_mut().for_each(|v| *v *= s);
        true
    } else {
        false
    }
}

/// One application of the frozen-input map on the window of `input`:
/// component `i` solves a scalar BSDE whose driver is `f^i` with `y`, the
/// other `Z` rows and (by default) the law frozen at `input`.
/// `terminal` is `Y` at the window's last node, `N x n`.
pub fn psi_map(
    spec: &GeneratorSpec,
    paths: &PathEnsemble,
    engine: &Engine,
    terminal: &[f64],
    input: &Solution,
    opts: &SolverOptions,
    z_clip: f64,
) -> Result<(Solution, usize)> {
    let (out, clips) = psi_map_with_law(spec, paths, engine, terminal, input, input, opts, z_clip)?;
    if opts.law_timing == LawTiming::Refreshed && spec.law_dependence() != LawDependence::None {
        let (again, more) = psi_map_with_law(spec, paths, engine, terminal, input, &out, opts, z_clip)?;
        return Ok((again, clips + more));
    }
    Ok((out, clips))
}

#[allow(clippy::too_many_arguments)]
fn psi_map_with_law(
    spec: &GeneratorSpec,
    paths: &PathEnsemble,
    engine: &Engine,
    terminal: &[f64],
    input: &Solution,
    law_src: &Solution,
    opts: &SolverOptions,
    z_clip: f64,
) -> Result<(Solution, usize)> {
    let (n, d, np) = (spec.n(), spec.d(), paths.particles());
    if input.n != n || input.d != d || input.particles != np || paths.dim() != d {
        return Err(Error::ShapeMismatch(format!(
            "input (N={}, n={}, d={}) does not match driver (n={n}, d={d}) and ensemble (N={np}, d={})",
            input.particles,
            input.n,
            input.d,
            paths.dim()
        )));
    }
    if terminal.len() != np * n {
        return Err(Error::ShapeMismatch(format!("terminal has {} entries, expected {}", terminal.len(), np * n)));
    }
    let (k0, k1) = (input.first, input.last);
    let laws = (k0..=k1).map(|k| law_at(spec, law_src, k)).collect::<Result<Vec<_>>>()?;

    // frozen V with every row clipped once
    let mut clips = 0usize;
    let mut vclip = input.z.clone();
    if z_clip.is_finite() {
        for row in vclip.chunks_mut(d) {
            clips += clip_row(row, z_clip) as usize;
        }
    }
    let vrow = |k: usize, j: usize| -> &[f64] {
        let kz = k.min(k1 - 1) - k0;
        let m = n * d;
        let start = (kz * np + j) * m;
        &vclip[start..start + m]
    };

    let mut out = Solution::window(input.grid, k0, k1, np, n, d, input.seed);
    out.y_node_mut(k1).copy_from_slice(terminal);
    let sopts = opts.scalar(z_clip);
    let grid = input.grid;
    for i in 0..n {
        let term_i: Vec<f64> = terminal.iter().skip(i).step_by(n).copied().collect();
        let mut fr = freeze_rows(spec, i, input.y_of(k0, 0), vrow(k0, 0), &laws[0])?;
        let mut driver = |k: usize, j: usize, z_row: &[f64]| {
            fr.rebind_law(&laws[k - k0]);
            fr.rebind(input.y_of(k, j), vrow(k, j), paths.aux_of(j));
            fr.eval(grid.time(k), z_row)
        };
        let res = scalar::solve_range(paths, engine, k0, k1, i, &mut driver, &term_i, &sopts)?;
        clips += res.clip_events;
        for k in k0..k1 {
            let yk = out.y_node_mut(k);
            for j in 0..np {
                yk[j * n + i] = res.y[(k - k0) * np + j];
            }
            let zk = out.z_node_mut(k);
            for j in 0..np {
                let src = &res.z[((k - k0) * np + j) * d..((k - k0) * np + j + 1) * d];
                zk[(j * n + i) * d..(j * n + i + 1) * d].copy_from_slice(src);
            }
        }
    }
    Ok((out, clips))
}

/// `max |a.Y - b.Y|` over the common window.
pub(crate) fn sup_diff_y(a: &Solution, b: &Solution) -> f64 {
    a.y.iter().zip(&b.y).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Picard bookkeeping shared by the local and theta drivers.
pub(crate) fn record(
    iteration: usize,
    prev: Option<&PicardRecord>,
    old: &Solution,
    new: &Solution,
    engine: &Engine,
    radii: Option<(f64, f64)>,
    clip_events: usize,
) -> Result<PicardRecord> {
    let sup_dy = sup_diff_y(old, new);
    let bmo_dz = crate::diagnostics::bmo_of_difference(new, old, engine)?;
    let bmo_z = crate::diagnostics::bmo_norm(new, engine)?;
    let max_y = crate::diagnostics::max_norm_y(new).0;
    let combined = sup_dy + bmo_dz;
    let ratio = prev.and_then(|p| if p.combined > 0.0 { Some(combined / p.combined) } else { None });
    let in_ball = radii.map(|(k1, k2)| max_y <= k1 * 1.05 && bmo_z * bmo_z <= k2 * 1.05);
    Ok(PicardRecord {
        iteration,
        sup_dy,
        bmo_dz,
        combined,
        ratio,
        max_y,
        bmo_z,
        in_ball,
        clip_events,
        exp_moments: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Local,
    Global,
    Theta,
    Volterra,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Local => "local",
            Scheme::Global => "global",
            Scheme::Theta => "theta",
            Scheme::Volterra => "volterra",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemeTrace {
    Picard(PicardTrace),
    Global(GlobalReport),
    Volterra(VolterraTrace),
}

impl SchemeTrace {
    pub fn converged(&self) -> bool {
        match self {
            SchemeTrace::Picard(t) => t.converged,
            SchemeTrace::Global(r) => r.converged,
            SchemeTrace::Volterra(t) => t.converged,
        }
    }
}

/// Run `scheme` on a registered fixture with its own terminal and certificates.
pub fn solve_fixture(
    fixture: &Fixture,
    scheme: Scheme,
    paths: &PathEnsemble,
    engine: &Engine,
    opts: &SolverOptions,
) -> Result<(Solution, SchemeTrace)> {
    let terminal = fixture.terminal.sample(paths)?;
    let certs = &fixture.certificates;
    let missing = |certificate| Error::MissingCertificate { fixture: fixture.name.clone(), certificate };
    Ok(match scheme {
        Scheme::Local => {
            let (s, t) = solve_local(&fixture.spec, certs.local.as_ref(), paths, engine, &terminal, opts)?;
            (s, SchemeTrace::Picard(t))
        }
        Scheme::Global => {
            let cert = certs.global.as_ref().ok_or_else(|| missing("global"))?;
            let (s, r) = solve_global(&fixture.spec, cert, paths, engine, &terminal, opts)?;
            (s, SchemeTrace::Global(r))
        }
        Scheme::Theta => {
            let (s, t) = solve_theta(&fixture.spec, certs.convex.as_ref(), paths, engine, &terminal, opts)?;
            (s, SchemeTrace::Picard(t))
        }
        Scheme::Volterra => {
            let kernel = fixture.kernel.as_ref().ok_or_else(|| missing("volterra"))?;
            let (s, t) = solve_volterra(
                &fixture.spec,
                kernel,
                certs.volterra.as_ref(),
                certs.convex.as_ref(),
                paths,
                engine,
                &terminal,
                opts,
            )?;
            (s, SchemeTrace::Volterra(t))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::build_grid;

    #[test]
    fn flat_solution_layout() {
        let g = build_grid(1.0, 3).unwrap();
        let s = Solution::flat(g, 0, 3, &[1.0, 2.0, 3.0, 4.0], 2, 1, 0.5, 9).unwrap();
        assert_eq!(s.particles(), 2);
        assert_eq!(s.y_node(3), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.y_node(0), &[1.5, 2.5, 3.5, 4.5]);
        assert_eq!(s.y_column(3, 1), vec![2.0, 4.0]);
        assert_eq!(s.z_node(2), &[0.0; 4]);
        assert_eq!(s.y_start_mean(), vec![2.5, 3.5]);
    }

    #[test]
    fn window_paste_and_slice() {
        let g = build_grid(1.0, 4).unwrap();
        let mut full = Solution::zeros(g, 2, 1, 1, 0);
        let part = Solution::flat(g, 1, 3, &[7.0, 8.0], 1, 1, 1.0, 0).unwrap();
        full.paste(&part);
        assert_eq!(full.y_node(1), &[8.0, 9.0]);
        assert_eq!(full.y_node(3), &[7.0, 8.0]);
        assert_eq!(full.y_node(4), &[0.0, 0.0]);
        assert_eq!(full.slice(1, 3), part);
    }

    #[test]
    fn dump_round_trip() {
        let g = build_grid(2.0, 3).unwrap();
        let mut s = Solution::flat(g, 1, 3, &[1.0, -2.0], 1, 2, 0.25, 5).unwrap();
        s.z_node_mut(2)[3] = 4.5;
        let mut buf = Vec::new();
        s.dump(&mut buf).unwrap();
        assert_eq!(Solution::load(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn options_validation() {
        assert!(SolverOptions::default().validate().is_ok());
        for bad in [
            SolverOptions { tol: -1.0, ..Default::default() },
            SolverOptions { max_iter: 0, ..Default::default() },
            SolverOptions { time_theta: 1.5, ..Default::default() },
            SolverOptions { z_clip: Some(0.0), ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn row_clipping() {
        let mut r = [3.0, 4.0];
        assert!(clip_row(&mut r, 1.0));
        assert!((r[0] - 0.6).abs() < 1e-15 && (r[1] - 0.8).abs() < 1e-15);
        assert!(!clip_row(&mut r, f64::INFINITY));
    }
}
