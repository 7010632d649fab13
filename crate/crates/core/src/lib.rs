//! Two-dimensional Coulomb gas at intermediate temperature.
//!
//! The crate covers four layers:
//!
//! * [`kernel`]: the logarithmic interaction `-log|x|`, its circle-smeared
//!   variants and Fourier-side representations.
//! * [`equilibrium`]: grid solvers for the equilibrium measure `mu_V` and the
//!   thermal equilibrium measure `mu_theta`.
//! * [`energy`]: Hamiltonian, mean-field and next-order (jellium) energies and
//!   the numerical checks built on them.
//! * [`sampler`] and [`stats`]: Metropolis sampling of the Gibbs measure and
//!   the point-process diagnostics run on the resulting archives.
//!
//! Data-parallel loops go through [`parallel`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iteration otherwise.
//! Reductions use a fixed chunking so both paths return bit-identical results.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod energy;
pub mod equilibrium;
pub mod error;
pub mod fft;
pub mod geometry;
pub mod grid;
pub mod kernel;
mod krylov;
pub mod parallel;
pub mod potential;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use geometry::Vec2;
pub use grid::{GridField, GridMeasure, GridSpec, SignedGridMeasure};
pub use potential::PotentialSpec;
