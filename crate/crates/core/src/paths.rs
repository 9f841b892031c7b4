//! Time grid and the seeded Brownian ensemble shared by every scheme.
//!
//! Every particle owns its own ChaCha stream (stream id = particle index), so
//! the path of particle `j` does not depend on how many particles are drawn.
//! Refinement studies in time go through [`PathEnsemble::coarsen`], which sums
//! increments of a fine ensemble instead of drawing new noise.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stream offset for the optional initial randomization channel. Particle
/// streams use ids `0..N`, the initial channel uses `INITIAL_STREAM_BASE + j`.
const INITIAL_STREAM_BASE: u64 = 1 << 62;

/// Uniform partition `t_k = k T / M` of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Node `t_k`. The last node is returned as `T` exactly.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }
}

pub fn build_grid(horizon: f64, steps: usize) -> Result<TimeGrid> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("grid needs at least one step".into()));
    }
    Ok(TimeGrid { horizon, steps })
}

/// `N` Brownian paths of dimension `d` sampled on a [`TimeGrid`].
///
/// Increments are stored step-major: entry `(k, j, l)` lives at
/// `(k * N + j) * d + l`. Positions `W_{t_k}` are the running sums of the
/// increments and are cached with the same layout over `M + 1` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    grid: TimeGrid,
    particles: usize,
    dim: usize,
    seed: u64,
    increments: Vec<f64>,
    positions: Vec<f64>,
    initial: Option<InitialChannel>,
}

/// Per-particle auxiliary samples independent of `W` (the measure-rich initial field).
#[derive(Debug, Clone, PartialEq)]
pub struct InitialChannel {
    pub dim: usize,
    pub values: Vec<f64>,
}

pub fn sample_brownian(grid: TimeGrid, particles: usize, dim: usize, seed: u64) -> Result<PathEnsemble> {
    if particles == 0 || dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "need N >= 1 and d >= 1, got N={particles}, d={dim}"
        )));
    }
    let steps = grid.steps();
    let sd = grid.dt().sqrt();
    let mut increments = vec![0.0; steps * particles * dim];
    for j in 0..particles {
        let mut rng = particle_rng(seed, j as u64);
        for k in 0..steps {
            for l in 0..dim {
                let g: f64 = StandardNormal.sample(&mut rng);
                increments[(k * particles + j) * dim + l] = g * sd;
            }
        }
    }
    Ok(PathEnsemble::from_increments(grid, particles, dim, seed, increments))
}

/// Antithetic variant: particles `N/2..N` carry the negated increments of
/// particles `0..N/2`, so every odd moment of the ensemble vanishes exactly.
pub fn sample_brownian_antithetic(grid: TimeGrid, particles: usize, dim: usize, seed: u64) -> Result<PathEnsemble> {
    if particles < 2 || particles % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "antithetic sampling needs an even N >= 2, got {particles}"
        )));
    }
    let half = sample_brownian(grid, particles / 2, dim, seed)?;
    let row = half.particles * dim;
    let mut increments = vec![0.0; grid.steps() * 2 * row];
    for k in 0..grid.steps() {
        let src = &half.increments[k * row..(k + 1) * row];
        let dst = &mut increments[k * 2 * row..(k + 1) * 2 * row];
        dst[..row].copy_from_slice(src);
        for (d, s) in dst[row..].iter_mut().zip(src) {
            *d = -s;
        }
    }
    Ok(PathEnsemble::from_increments(grid, particles, dim, seed, increments))
}

fn particle_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl PathEnsemble {
    fn from_increments(grid: TimeGrid, particles: usize, dim: usize, seed: u64, increments: Vec<f64>) -> Self {
        let row = particles * dim;
        let mut positions = vec![0.0; (grid.steps() + 1) * row];
        for k in 0..grid.steps() {
            for r in 0..row {
                positions[(k + 1) * row + r] = positions[k * row + r] + increments[k * row + r];
            }
        }
        PathEnsemble {
            grid,
            particles,
            dim,
            seed,
            increments,
            positions,
            initial: None,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `W_{t_k}` for every particle as an `N x d` row-major matrix.
    pub fn brownian_at(&self, k: usize) -> Result<&[f64]> {
        if k > self.grid.steps() {
            return Err(Error::IndexOutOfRange {
                index: k,
                max: self.grid.steps(),
            });
        }
        let row = self.particles * self.dim;
        Ok(&self.positions[k * row..(k + 1) * row])
    }

    /// `Delta W_k = W_{t_{k+1}} - W_{t_k}` as an `N x d` row-major matrix, `k < M`.
    pub fn increment(&self, k: usize) -> Result<&[f64]> {
        if k >= self.grid.steps() {
            return Err(Error::IndexOutOfRange {
                index: k,
                max: self.grid.steps() - 1,
            });
        }
        let row = self.particles * self.dim;
        Ok(&self.increments[k * row..(k + 1) * row])
    }

    pub(crate) fn position_unchecked(&self, k: usize) -> &[f64] {
        let row = self.particles * self.dim;
        &self.positions[k * row..(k + 1) * row]
    }

    /// Terminal position of one particle.
    pub fn terminal_of(&self, j: usize) -> &[f64] {
        let m = self.grid.steps();
        let start = (m * self.particles + j) * self.dim;
        &self.positions[start..start + self.dim]
    }

    /// Attach `dim` independent standard normal samples per particle, drawn
    /// from streams disjoint from the Brownian ones.
    pub fn with_initial_channel(mut self, dim: usize) -> Self {
        let mut values = vec![0.0; self.particles * dim];
        for j in 0..self.particles {
            let mut rng = particle_rng(self.seed, INITIAL_STREAM_BASE + j as u64);
            for l in 0..dim {
                values[j * dim + l] = StandardNormal.sample(&mut rng);
            }
        }
        self.initial = Some(InitialChannel { dim, values });
        self
    }

    pub fn initial_channel(&self) -> Option<&InitialChannel> {
        self.initial.as_ref()
    }

    /// Auxiliary samples of particle `j` (empty when the channel is off).
    pub fn aux_of(&self, j: usize) -> &[f64] {
        match &self.initial {
            Some(ch) => &ch.values[j * ch.dim..(j + 1) * ch.dim],
            None => &[],
        }
    }

    /// Same noise on a grid with `M / factor` steps: increments are summed in
    /// blocks and positions are the fine positions at every `factor`-th node.
    pub fn coarsen(&self, factor: usize) -> Result<PathEnsemble> {
        let steps = self.grid.steps();
        if factor == 0 || steps % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "coarsening factor {factor} does not divide {steps} steps"
            )));
        }
        let grid = build_grid(self.grid.horizon(), steps / factor)?;
        let row = self.particles * self.dim;
        let mut increments = vec![0.0; grid.steps() * row];
        let mut positions = vec![0.0; (grid.steps() + 1) * row];
        for kc in 0..grid.steps() {
            for r in 0..row {
                let mut s = 0.0;
                for kf in kc * factor..(kc + 1) * factor {
                    s += self.increments[kf * row + r];
                }
                increments[kc * row + r] = s;
            }
        }
        for kc in 0..=grid.steps() {
            positions[kc * row..(kc + 1) * row]
                .copy_from_slice(&self.positions[kc * factor * row..(kc * factor + 1) * row]);
        }
        Ok(PathEnsemble {
            grid,
            particles: self.particles,
            dim: self.dim,
            seed: self.seed,
            increments,
            positions,
            initial: self.initial.clone(),
        })
    }

    /// Little-endian dump: header `{N, M, d, seed}` as four `u64`, then
    /// `T` as `f64`, then the increments in step-major order as `f64`.
    pub fn dump<W: Write>(&self, mut out: W) -> Result<()> {
        for v in [
            self.particles as u64,
            self.grid.steps() as u64,
            self.dim as u64,
            self.seed,
        ] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&self.grid.horizon().to_le_bytes())?;
        for x in &self.increments {
            out.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load<R: Read>(mut input: R) -> Result<PathEnsemble> {
        let mut word = [0u8; 8];
        let mut header = [0u64; 4];
        for h in header.iter_mut() {
            input.read_exact(&mut word)?;
            *h = u64::from_le_bytes(word);
        }
        input.read_exact(&mut word)?;
        let horizon = f64::from_le_bytes(word);
        let [particles, steps, dim, seed] = header;
        let grid = build_grid(horizon, steps as usize)?;
        if particles == 0 || dim == 0 {
            return Err(Error::InvalidArgument("dump header has zero particles or dimension".into()));
        }
        let len = (steps * particles * dim) as usize;
        let mut increments = Vec::with_capacity(len);
        for _ in 0..len {
            input.read_exact(&mut word)?;
            increments.push(f64::from_le_bytes(word));
        }
        Ok(PathEnsemble::from_increments(
            grid,
            particles as usize,
            dim as usize,
            seed,
            increments,
        ))
    }
}
