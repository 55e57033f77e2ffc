//! Frozen constants for the inequality checks.
//!
//! The analytic constants in the stability estimates are existential. Each
//! constant below is the largest observed ratio lhs/rhs over the reference
//! family in [`reference_family`], times a safety margin of about 1.25, as
//! produced by [`crate::diagnostics::calibrate`]. The checks then act as
//! regression tests: a change that pushes any reference ratio above its
//! constant is a behavioural change worth investigating.
//!
//! Reference family: d = 1, grid 128, T = 0.25, 256 IMEX-Euler steps,
//! Kuramoto-type and low-mode cosine potentials, Laplace initial conditions.

use crate::error::Result;
use crate::models::{cosine_potential, kuramoto, periodized_laplace, InitialCondition, Potential};
use crate::pde::{Scheme, SolverConfig};
use crate::spectral::TorusGrid;

/// Margin applied on top of the largest calibration ratio.
pub const CALIBRATION_MARGIN: f64 = 1.25;

/// `∫₀ᵀ H(ρ₁|ρ₂) ≤ C ∫₀ᵀ ‖∇(W₁−W₂)∗ρ₂‖²_{L²}`.
pub const ENTROPY_STABILITY_C: f64 = 0.082;

/// `‖ρ_{W₁} − ρ_{W₂}‖_{L²(λ)} ≤ C ‖W₁ − W₂‖_{H^{-β}}`, indexed by β/2 − 1 for β = 2, 4, 6.
pub const FORWARD_LIPSCHITZ_C: [f64; 3] = [1.79, 72.3, 6840.0];

/// Short-time recovery bound for `‖W − W₀‖²_{L²}`.
pub const SHORT_TIME_C: f64 = 35.8;

/// Chaos trend: λ-normalized L¹ distance between the particle histogram and
/// the PDE cell averages at n = 10⁴ (Kuramoto, laplace(2), 4 time bins ×
/// 16 space bins, 256 Euler–Maruyama steps), for every seed 1–5.
pub const CHAOS_L1_BOUND: f64 = 0.026;

pub fn forward_lipschitz_constant(beta: u32) -> Option<f64> {
    match beta {
        2 | 4 | 6 => Some(FORWARD_LIPSCHITZ_C[(beta / 2 - 1) as usize]),
        _ => None,
    }
}

pub fn reference_grid() -> TorusGrid {
    TorusGrid::new(1, 128).expect("valid grid")
}

pub fn reference_solver() -> SolverConfig {
    SolverConfig::new(0.25, 256, Scheme::Imex1)
}

/// Band limit and smoothness used by the short-time reference checks.
pub const REFERENCE_K: usize = 2;
pub const REFERENCE_ALPHA: f64 = 2.5;

/// The calibration family.
pub struct ReferenceFamily {
    pub potentials: Vec<Potential>,
    pub initials: Vec<InitialCondition>,
    pub solver: SolverConfig,
}

pub fn reference_family() -> Result<ReferenceFamily> {
    let grid = reference_grid();
    let mut potentials = Vec::new();
    for s in [0.1, 0.25, 0.5, 1.0, 1.5] {
        potentials.push(kuramoto(grid, s)?);
    }
    potentials.push(cosine_potential(&[([2, 0], -0.5)], grid)?);
    potentials.push(cosine_potential(&[([1, 0], -0.5), ([2, 0], 0.25)], grid)?);
    potentials.push(Potential::zero(grid));
    let initials = vec![periodized_laplace(1, grid)?, periodized_laplace(2, grid)?];
    Ok(ReferenceFamily { potentials, initials, solver: reference_solver() })
}
