//! Growth-fragmentation toolkit.
//!
//! Simulates ∂ₜf + ∂ₓ(τf) = ℱ₊f − Bf on a truncated size mesh, computes the
//! Perron eigentriple (λ, G, φ) and measures convergence toward
//! `⟨f_in, φ⟩·G` after rescaling by e^{λt}.

pub mod characteristics;
pub mod cli;
pub mod coefficients;
pub mod diagnostics;
pub mod discretization;
pub mod eigensolver;
pub mod error;
pub mod evolution;
pub mod particle_oracle;
mod piecewise;
pub mod quadrature;

pub use error::{GfError, Result};
