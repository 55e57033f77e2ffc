//! Simulation of the McKean–Vlasov equation
//!
//! ```text
//! ∂ρ/∂t = Δρ + ∇·(ρ ∇W∗ρ),   ρ(0) = φ,
//! ```
//!
//! on the periodic torus in one or two dimensions, synthetic regression data
//! drawn from its solution, and Bayesian recovery of the interaction
//! potential `W` under Gaussian Fourier-series priors with pCN MCMC.
//!
//! The modules build on each other bottom-up: [`spectral`] (grids and FFTs),
//! [`models`] (potentials and initial conditions), [`pde`] (solvers),
//! [`particles`] (interacting particle systems), [`observation`],
//! [`priors`], [`inference`], [`diagnostics`] and [`experiments`].

// `!(x > 0.0)` is used deliberately so that NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constants;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod inference;
pub mod models;
pub mod observation;
pub mod particles;
pub mod pde;
pub mod priors;
pub mod spectral;
pub(crate) mod util;

pub use error::{Error, Result};
pub use models::{InitialCondition, Potential};
pub use pde::{DensityTrajectory, Scheme, SolverConfig};
pub use spectral::{FourierCoeffs, GridFunction, TorusGrid};

pub use rustfft::num_complex::Complex64;
