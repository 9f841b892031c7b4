//! Particle solvers for multi-dimensional mean-field backward stochastic
//! differential equations whose generators grow quadratically in the own row
//! of `Z` ("diagonally quadratic").
//!
//! The crate is organised bottom-up:
//!
//! - [`paths`]: the time grid and the seeded Brownian ensemble shared by every scheme.
//! - [`measures`]: empirical laws over particle clouds (Wasserstein-to-point, moments).
//! - [`generators`]: drivers, assumption certificates, the fixture registry and the
//!   row-freezing transform used by the local scheme.
//! - [`condexp`]: least-squares Monte Carlo conditional expectations.
//! - [`constants`]: the explicit constants (radii, window equations, the `eta` ODE, ...).
//! - [`solvers`]: the scalar backward engine, the local fixed-point map, global
//!   stitching, the theta-scheme Picard iteration and the Volterra outer iteration.
//! - [`diagnostics`]: BMO norms, a-priori bound checks, John-Nirenberg, theta-gaps.
//! - [`oracles`]: closed-form and quadrature references used for verification.

pub mod condexp;
pub mod constants;
pub mod diagnostics;
pub mod error;
pub mod generators;
pub mod measures;
pub mod oracles;
pub mod paths;
pub mod solvers;

pub use error::{Error, Result};
