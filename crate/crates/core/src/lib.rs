//! Discrete Schrödinger operators −Δ+V on d-dimensional tori (d ≤ 3).
//!
//! The crate discretizes ℝ^d/L𝓛₀ with second-order periodic finite differences,
//! builds deterministic Anderson–Bernoulli potentials, computes low-energy
//! eigenpairs, and provides the diagnostic machinery for delocalization
//! dichotomies, localization lengths, lattice Green's kernels, and spectral
//! projector states.

pub mod diagnostics;
pub mod eigen;
pub mod error;
pub mod fft;
pub mod field;
pub mod greens;
pub mod grid;
pub mod hamiltonian;
pub mod par;
pub mod potential;
pub mod projector;
pub mod scales;

pub use error::{Error, Result};
pub use field::ScalarField;
pub use grid::{build_grid, TorusGrid, TorusSpec};
