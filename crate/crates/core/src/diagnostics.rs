//! Empirical checks of the analytic inequalities and stability quantities.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::constants::{self, ReferenceFamily, REFERENCE_ALPHA, REFERENCE_K};
use crate::error::{Error, Result};
use crate::models::{InitialCondition, Potential};
use crate::pde::{solve_mckean_vlasov, spectral_time_derivative, DensityTrajectory, SolverConfig};
use crate::spectral::{freq_norm, sobolev_norm_coeffs, FourierCoeffs, GridFunction};
use crate::util::trapezoid;

const HOLDS_SLACK: f64 = 1e-8;
/// Mode magnitudes below this make the stability constant infinite.
pub const MODE_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Serialize)]
pub struct InequalityReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub holds: bool,
    pub context: serde_json::Value,
}

impl InequalityReport {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64, context: serde_json::Value) -> Self {
        let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs };
        InequalityReport { name: name.into(), lhs, rhs, ratio, holds: lhs <= rhs * (1.0 + HOLDS_SLACK), context }
    }
}

/// Appends reports to a JSON-lines file.
pub fn append_jsonl(path: &Path, reports: &[InequalityReport]) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    for r in reports {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

/// `H(p|q) = ∫ p log(p/q)`, periodic trapezoid rule, clamped at 0.
pub fn relative_entropy(p: &GridFunction, q: &GridFunction) -> Result<f64> {
    p.grid().ensure_same(&q.grid())?;
    if p.min() <= 0.0 || q.min() <= 0.0 {
        return Err(Error::InvalidParameter("relative entropy needs strictly positive densities".into()));
    }
    let sum: f64 = p.values().iter().zip(q.values()).map(|(a, b)| a * (a / b).ln()).sum();
    Ok((sum / p.grid().len() as f64).max(0.0))
}

/// `h²(p,q) = ∫ (√p − √q)²`. Negative values are treated as zero.
pub fn hellinger_sq(p: &GridFunction, q: &GridFunction) -> Result<f64> {
    p.grid().ensure_same(&q.grid())?;
    let sum: f64 =
        p.values().iter().zip(q.values()).map(|(a, b)| (a.max(0.0).sqrt() - b.max(0.0).sqrt()).powi(2)).sum();
    Ok(sum / p.grid().len() as f64)
}

/// `‖∇(V ∗ ρ)‖²_{L²}` from Fourier coefficients.
fn grad_conv_sq(v: &FourierCoeffs, rho: &FourierCoeffs) -> f64 {
    let grid = v.grid();
    let mut total = 0.0;
    for axis in 0..grid.dim() {
        let sym = grid.derivative_symbols(axis);
        total +=
            v.as_slice().iter().zip(rho.as_slice()).zip(&sym).map(|((a, b), s)| (a * b * s).norm_sqr()).sum::<f64>();
    }
    total
}

fn potential_context(w1: &Potential, w2: &Potential, phi: &InitialCondition, cfg: &SolverConfig) -> serde_json::Value {
    json!({
        "W1": w1.id(),
        "W2": w2.id(),
        "phi": phi.id(),
        "grid": w1.grid().to_string(),
        "T": cfg.horizon,
        "steps": cfg.steps,
        "scheme": cfg.scheme.to_string(),
    })
}

/// Both sides of the entropy-stability inequality without the constant:
/// `(∫₀ᵀ H(ρ₁|ρ₂), ∫₀ᵀ ‖∇(W₁−W₂)∗ρ₂‖²)`.
pub fn entropy_stability_terms(
    w1: &Potential,
    w2: &Potential,
    rho1: &DensityTrajectory,
    rho2: &DensityTrajectory,
) -> Result<(f64, f64)> {
    let dw = w1.sub(w2)?;
    let h = rho1.step();
    let ent =
        rho1.frames().iter().zip(rho2.frames()).map(|(a, b)| relative_entropy(a, b)).collect::<Result<Vec<_>>>()?;
    let drive: Vec<f64> = rho2.spectra().iter().map(|c| grad_conv_sq(dw.fourier(), c)).collect();
    Ok((trapezoid(&ent, h), trapezoid(&drive, h)))
}

pub fn check_entropy_stability(
    w1: &Potential,
    w2: &Potential,
    phi: &InitialCondition,
    cfg: &SolverConfig,
) -> Result<InequalityReport> {
    let rho1 = solve_mckean_vlasov(w1, phi, cfg)?;
    let rho2 = solve_mckean_vlasov(w2, phi, cfg)?;
    entropy_report(w1, w2, phi, cfg, &rho1, &rho2)
}

fn entropy_report(
    w1: &Potential,
    w2: &Potential,
    phi: &InitialCondition,
    cfg: &SolverConfig,
    rho1: &DensityTrajectory,
    rho2: &DensityTrajectory,
) -> Result<InequalityReport> {
    let (lhs, integral) = entropy_stability_terms(w1, w2, rho1, rho2)?;
    let c = constants::ENTROPY_STABILITY_C;
    let mut ctx = potential_context(w1, w2, phi, cfg);
    ctx["C"] = json!(c);
    ctx["rhs_integral"] = json!(integral);
    Ok(InequalityReport::new("entropy_stability", lhs, c * integral, ctx))
}

/// Unscaled sides of the forward Lipschitz bound:
/// `(‖ρ₁−ρ₂‖_{L²(λ)}, ‖W₁−W₂‖_{H^{-β}})`.
pub fn forward_lipschitz_terms(
    w1: &Potential,
    w2: &Potential,
    rho1: &DensityTrajectory,
    rho2: &DensityTrajectory,
    beta: u32,
) -> Result<(f64, f64)> {
    let dw = w1.sub(w2)?;
    let lhs = crate::pde::space_time_l2_distance(rho1, rho2)?;
    Ok((lhs, sobolev_norm_coeffs(dw.fourier(), -(beta as f64))))
}

pub fn check_forward_lipschitz(
    w1: &Potential,
    w2: &Potential,
    phi: &InitialCondition,
    beta: u32,
    cfg: &SolverConfig,
) -> Result<InequalityReport> {
    let c = constants::forward_lipschitz_constant(beta)
        .ok_or_else(|| Error::InvalidParameter(format!("no calibrated constant for beta = {beta} (use 2, 4 or 6)")))?;
    let mut ctx = potential_context(w1, w2, phi, cfg);
    ctx["beta"] = json!(beta);
    ctx["C"] = json!(c);
    if w1.sub(w2)?.is_zero() {
        ctx["degenerate"] = json!(true);
        return Ok(InequalityReport::new("forward_lipschitz", 0.0, 0.0, ctx));
    }
    let rho1 = solve_mckean_vlasov(w1, phi, cfg)?;
    let rho2 = solve_mckean_vlasov(w2, phi, cfg)?;
    let (lhs, norm) = forward_lipschitz_terms(w1, w2, &rho1, &rho2, beta)?;
    ctx["norm_H-beta"] = json!(norm);
    Ok(InequalityReport::new("forward_lipschitz", lhs, c * norm, ctx))
}

/// `ι_K = sup_{0<|k|≤K} 1/|ĉ(k)|²`; `+∞` if any mode is (numerically) zero
/// or the band is empty.
pub fn stability_constant_coeffs(c: &FourierCoeffs, band: usize) -> f64 {
    let mut worst = 0.0f64;
    let mut any = false;
    for (k, z) in c.iter() {
        let r = freq_norm(k);
        if k == [0, 0] || r > band as f64 {
            continue;
        }
        any = true;
        let m = z.norm();
        if m < MODE_FLOOR {
            return f64::INFINITY;
        }
        worst = worst.max(1.0 / (m * m));
    }
    if any {
        worst
    } else {
        f64::INFINITY
    }
}

/// Stability constant of the trajectory frame nearest to `t`.
pub fn stability_constant(rho: &DensityTrajectory, band: usize, t: f64) -> f64 {
    stability_constant_coeffs(&rho.spectra()[rho.index_of_time(t)], band)
}

/// `min_{0<|k|≤K} |ĉ(k)|`.
pub fn min_mode(c: &FourierCoeffs, band: usize) -> f64 {
    c.iter()
        .filter(|(k, _)| *k != [0, 0] && freq_norm(*k) <= band as f64)
        .map(|(_, z)| z.norm())
        .fold(f64::INFINITY, f64::min)
}

/// Time-Lipschitz constant `max_m ‖ρ_{m+1} − ρ_m‖_{L¹}/h`.
pub fn time_lipschitz_constant(rho: &DensityTrajectory) -> f64 {
    let h = rho.step();
    rho.frames().windows(2).map(|w| w[1].sub(&w[0]).expect("same grid").l1_norm() / h).fold(0.0, f64::max)
}

/// Small-time horizon `t₀ = (c / 2C) K^{−ζ}`.
pub fn short_time_t0(c: f64, zeta: f64, band: usize, c_lip: f64) -> f64 {
    if c_lip <= 0.0 {
        return f64::INFINITY;
    }
    c / (2.0 * c_lip) * (band as f64).powf(-zeta)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ShortTimeTerms {
    /// `‖W − W₀‖²_{L²}`.
    pub lhs: f64,
    /// `K^{−2α−2}`.
    pub bias: f64,
    /// `t₀^{−1} K^{2ζ}(‖Δρ‖²_{H¹([0,t₀],H^{−1})} + ‖Δρ‖²_{L²([0,t₀],H¹)})`.
    pub data: f64,
    /// Mesh index of `t₀`.
    pub m0: usize,
}

/// Terms of the short-time deconvolution estimate. `t₀` snaps down to the
/// mesh; at least one step is always used.
#[allow(clippy::too_many_arguments)]
pub fn short_time_terms(
    w: &Potential,
    w0: &Potential,
    rho_w: &DensityTrajectory,
    rho_w0: &DensityTrajectory,
    band: usize,
    t0: f64,
    alpha: f64,
    zeta: f64,
) -> Result<ShortTimeTerms> {
    if !(t0 > 0.0) {
        return Err(Error::InvalidParameter(format!("t0 = {t0} must be positive")));
    }
    let leak = w.fourier().iter().filter(|(k, z)| freq_norm(*k) > band as f64 && z.norm() > 1e-12).count();
    if leak > 0 {
        return Err(Error::InvalidParameter(format!("W has {leak} modes beyond the band limit K = {band}")));
    }
    let dw = w.sub(w0)?;
    let h = rho_w.step();
    let m0 = ((t0 / h + 1e-9).floor() as usize).clamp(1, rho_w.len() - 1);
    let t0_mesh = m0 as f64 * h;
    crate::pde::check_same_mesh(rho_w, rho_w0)?;
    let diff: Vec<FourierCoeffs> = rho_w.spectra()[..=m0]
        .iter()
        .zip(&rho_w0.spectra()[..=m0])
        .map(|(a, b)| {
            let v = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x - y).collect();
            FourierCoeffs::new(a.grid(), v).expect("same grid")
        })
        .collect();
    let dt = spectral_time_derivative(&diff, h);
    let sq = |c: &FourierCoeffs, s: f64| sobolev_norm_coeffs(c, s).powi(2);
    let h1_time: Vec<f64> = diff.iter().zip(&dt).map(|(a, b)| sq(a, -1.0) + sq(b, -1.0)).collect();
    let l2_h1: Vec<f64> = diff.iter().map(|a| sq(a, 1.0)).collect();
    let kf = band as f64;
    let data = kf.powf(2.0 * zeta) / t0_mesh * (trapezoid(&h1_time, h) + trapezoid(&l2_h1, h));
    Ok(ShortTimeTerms { lhs: dw.l2_norm().powi(2), bias: kf.powf(-2.0 * alpha - 2.0), data, m0 })
}

#[allow(clippy::too_many_arguments)]
pub fn short_time_recovery_bound(
    w: &Potential,
    w0: &Potential,
    rho_w: &DensityTrajectory,
    rho_w0: &DensityTrajectory,
    band: usize,
    t0: f64,
    alpha: f64,
    zeta: f64,
) -> Result<InequalityReport> {
    let terms = short_time_terms(w, w0, rho_w, rho_w0, band, t0, alpha, zeta)?;
    let c = constants::SHORT_TIME_C;
    let ctx = json!({
        "W": w.id(),
        "W0": w0.id(),
        "K": band,
        "t0": t0,
        "t0_mesh": terms.m0 as f64 * rho_w.step(),
        "alpha": alpha,
        "zeta": zeta,
        "bias": terms.bias,
        "data": terms.data,
        "C": c,
    });
    Ok(InequalityReport::new("short_time_recovery", terms.lhs, c * (terms.bias + terms.data), ctx))
}

#[derive(Debug, Clone, Serialize)]
pub struct PersistenceReport {
    pub band: usize,
    pub t0: f64,
    pub c_lip: f64,
    /// Mesh frames checked (`t_m ≤ t₀`).
    pub frames: usize,
    /// `min over checked (t,k), t > 0, of |ρ̂(t,k)| − (|φ̂(k)| − C_lip t)`;
    /// `+∞` when no positive mesh time lies below `t₀`.
    pub worst_margin: f64,
    pub holds: bool,
}

/// Checks `|ρ̂(t,k)| ≥ |φ̂(k)| − C_lip·t` for mesh times `t ≤ t₀`, `0<|k|≤K`.
pub fn mode_persistence(rho: &DensityTrajectory, band: usize, t0: f64, c_lip: f64) -> PersistenceReport {
    let phi = &rho.spectra()[0];
    let mut worst = f64::INFINITY;
    let mut frames = 0;
    for (t, c) in rho.times().iter().zip(rho.spectra()) {
        if *t > t0 * (1.0 + 1e-12) {
            break;
        }
        frames += 1;
        if *t == 0.0 {
            continue;
        }
        for (k, z) in c.iter() {
            if k == [0, 0] || freq_norm(k) > band as f64 {
                continue;
            }
            worst = worst.min(z.norm() - (phi.at(k).norm() - c_lip * t));
        }
    }
    PersistenceReport { band, t0, c_lip, frames, worst_margin: worst, holds: worst >= -1e-12 }
}

/// Largest mesh time with `min_{0<|k|≤K}|ρ̂(t,k)| ≥ ½ min_{0<|k|≤K}|φ̂(k)|`,
/// scanning forward from 0 until the criterion first fails.
pub fn smallness_horizon(rho: &DensityTrajectory, band: usize) -> f64 {
    let threshold = 0.5 * min_mode(&rho.spectra()[0], band);
    let mut last = 0.0;
    for (t, c) in rho.times().iter().zip(rho.spectra()) {
        if min_mode(c, band) < threshold {
            break;
        }
        last = *t;
    }
    last
}

/// Largest ratios observed on the reference family.
#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    pub entropy_stability: f64,
    /// For β = 2, 4, 6.
    pub forward_lipschitz: [f64; 3],
    pub short_time: f64,
    pub pairs: usize,
}

/// Solves every (W, φ) of the family and returns the largest lhs/rhs ratios
/// (before applying any margin).
pub fn calibrate(family: &ReferenceFamily) -> Result<Calibration> {
    let cfg = &family.solver;
    let mut cache: HashMap<(usize, usize), DensityTrajectory> = HashMap::new();
    for (j, phi) in family.initials.iter().enumerate() {
        for (i, w) in family.potentials.iter().enumerate() {
            cache.insert((i, j), solve_mckean_vlasov(w, phi, cfg)?);
        }
    }
    let mut cal = Calibration { entropy_stability: 0.0, forward_lipschitz: [0.0; 3], short_time: 0.0, pairs: 0 };
    let np = family.potentials.len();
    for (j, phi) in family.initials.iter().enumerate() {
        for a in 0..np {
            for b in 0..np {
                let (w1, w2) = (&family.potentials[a], &family.potentials[b]);
                if a == b || w1.sub(w2)?.is_zero() {
                    continue;
                }
                cal.pairs += 1;
                let (r1, r2) = (&cache[&(a, j)], &cache[&(b, j)]);
                let (lhs, rhs) = entropy_stability_terms(w1, w2, r1, r2)?;
                if rhs > 0.0 {
                    cal.entropy_stability = cal.entropy_stability.max(lhs / rhs);
                }
                for (slot, beta) in [2u32, 4, 6].into_iter().enumerate() {
                    let (lhs, rhs) = forward_lipschitz_terms(w1, w2, r1, r2, beta)?;
                    cal.forward_lipschitz[slot] = cal.forward_lipschitz[slot].max(lhs / rhs);
                }
                if let Some(r) = short_time_ratio(w1, w2, r1, r2, phi)? {
                    cal.short_time = cal.short_time.max(r);
                }
            }
        }
    }
    Ok(cal)
}

/// Short-time ratio with `W = w1` (band-limited by `REFERENCE_K`) against
/// `W₀ = w2`, `t₀` from the theorem's rule on `ρ_{W₀}`.
fn short_time_ratio(
    w: &Potential,
    w0: &Potential,
    rho_w: &DensityTrajectory,
    rho_w0: &DensityTrajectory,
    phi: &InitialCondition,
) -> Result<Option<f64>> {
    if w.effective_band(1e-12) > REFERENCE_K {
        return Ok(None);
    }
    let Some(decon) = phi.decon_params() else { return Ok(None) };
    let t0 = short_time_t0(decon.c, decon.zeta, REFERENCE_K, time_lipschitz_constant(rho_w0));
    let terms = short_time_terms(w, w0, rho_w, rho_w0, REFERENCE_K, t0, REFERENCE_ALPHA, decon.zeta)?;
    Ok(Some(terms.lhs / (terms.bias + terms.data)))
}
