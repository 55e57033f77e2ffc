//! Ground-truth interaction potentials and initial conditions.

use std::f64::consts::PI;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{freq_norm, half_lattice, FourierCoeffs, Freq, GridFunction, SpectralPlan, TorusGrid};
use crate::util::{parse_id, rng, Params};
use crate::Complex64;

const MEAN_TOL: f64 = 1e-12;
const MASS_TOL: f64 = 1e-10;

/// Largest coefficient magnitude outside the Euclidean ball `|k| ≤ band`.
fn out_of_band(c: &FourierCoeffs, band: usize) -> f64 {
    c.iter().filter(|(k, _)| freq_norm(*k) > band as f64 + 1e-9).map(|(_, z)| z.norm()).fold(0.0, f64::max)
}

/// Mean-zero real interaction potential.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    repr: GridFunction,
    fourier: FourierCoeffs,
    band_limit: Option<usize>,
    id: String,
}

impl Potential {
    /// Builds a potential from exact Fourier coefficients.
    pub fn from_fourier(fourier: FourierCoeffs, band_limit: Option<usize>, id: impl Into<String>) -> Result<Self> {
        let grid = fourier.grid();
        if fourier.as_slice()[0].norm() > MEAN_TOL {
            return Err(Error::Invariant(format!("potential mean {:e} is not zero", fourier.as_slice()[0].norm())));
        }
        if fourier.conjugate_asymmetry() > 1e-12 {
            return Err(Error::InvalidParameter("potential coefficients are not conjugate-symmetric".into()));
        }
        if let Some(k) = band_limit {
            if k >= grid.nyquist() {
                return Err(Error::Resolution(format!(
                    "band limit {k} must be below the Nyquist frequency {} of grid {grid}",
                    grid.nyquist()
                )));
            }
            let leak = out_of_band(&fourier, k);
            if leak > 1e-12 {
                return Err(Error::InvalidParameter(format!("coefficient {leak:e} beyond band limit {k}")));
            }
        }
        let repr = SpectralPlan::new(grid).from_fourier(&fourier);
        Ok(Potential { repr, fourier, band_limit, id: id.into() })
    }

    /// Builds a potential from grid samples, dropping the mean (potentials are
    /// only identified up to constants).
    pub fn from_grid(f: &GridFunction, id: impl Into<String>) -> Result<Self> {
        let mut c = SpectralPlan::new(f.grid()).to_fourier(f);
        c.as_mut_slice()[0] = Complex64::new(0.0, 0.0);
        symmetrize(&mut c);
        Potential::from_fourier(c, None, id)
    }

    pub fn zero(grid: TorusGrid) -> Self {
        Potential {
            repr: GridFunction::constant(grid, 0.0),
            fourier: FourierCoeffs::zeros(grid),
            band_limit: Some(0),
            id: "zero".into(),
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.repr.grid()
    }

    pub fn repr(&self) -> &GridFunction {
        &self.repr
    }

    pub fn fourier(&self) -> &FourierCoeffs {
        &self.fourier
    }

    pub fn band_limit(&self) -> Option<usize> {
        self.band_limit
    }

    /// Smallest `K` with all coefficients beyond `|k| = K` below `tol`.
    pub fn effective_band(&self, tol: f64) -> usize {
        self.fourier
            .iter()
            .filter(|(_, z)| z.norm() > tol)
            .map(|(k, _)| freq_norm(k).ceil() as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn is_zero(&self) -> bool {
        self.fourier.as_slice().iter().all(|z| *z == Complex64::new(0.0, 0.0))
    }

    /// Nonzero modes `(k, Ŵ(k))`, both members of every conjugate pair.
    pub fn active_modes(&self) -> Vec<(Freq, Complex64)> {
        self.fourier.iter().filter(|(_, z)| z.norm() > 0.0).collect()
    }

    /// `sup_x |∇W(x)|` over the grid nodes.
    pub fn grad_sup(&self) -> f64 {
        let g = crate::spectral::gradient(&self.repr);
        (0..self.grid().len()).map(|i| g.iter().map(|c| c.values()[i].powi(2)).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }

    /// `‖W‖_{C²} = Σ_{|a|≤2} sup |∂^a W|` over the grid nodes, with mixed
    /// partials counted once.
    pub fn c2_norm(&self) -> f64 {
        let sup = |f: &GridFunction| f.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let first = crate::spectral::gradient(&self.repr);
        let mut total = sup(&self.repr);
        for (a, g) in first.iter().enumerate() {
            total += sup(g);
            total += crate::spectral::gradient(g).iter().skip(a).map(sup).sum::<f64>();
        }
        total
    }

    pub fn scaled(&self, s: f64) -> Potential {
        let coeffs: Vec<Complex64> = self.fourier.as_slice().iter().map(|z| z * s).collect();
        let fourier = FourierCoeffs::new(self.grid(), coeffs).expect("same grid");
        Potential { repr: self.repr.scale(s), fourier, band_limit: self.band_limit, id: format!("{s}*{}", self.id) }
    }

    pub fn sub(&self, other: &Potential) -> Result<Potential> {
        self.grid().ensure_same(&other.grid())?;
        let coeffs: Vec<Complex64> =
            self.fourier.as_slice().iter().zip(other.fourier.as_slice()).map(|(a, b)| a - b).collect();
        let band = match (self.band_limit, other.band_limit) {
            (Some(a), Some(b)) => Some(a.max(b)),
            _ => None,
        };
        Ok(Potential {
            repr: self.repr.sub(&other.repr)?,
            fourier: FourierCoeffs::new(self.grid(), coeffs)?,
            band_limit: band,
            id: format!("{}-{}", self.id, other.id),
        })
    }

    /// `‖W‖_{L²}` via Parseval.
    pub fn l2_norm(&self) -> f64 {
        crate::spectral::sobolev_norm_coeffs(&self.fourier, 0.0)
    }

    /// Largest `|W(x) − W(−x)|` over the grid nodes.
    pub fn asymmetry(&self) -> f64 {
        let g = self.grid();
        let v = self.repr.values();
        (0..g.len()).map(|i| (v[i] - v[g.conjugate_index(i)]).abs()).fold(0.0, f64::max)
    }
}

/// Averages each coefficient with the conjugate of its mirror image.
fn symmetrize(c: &mut FourierCoeffs) {
    let grid = c.grid();
    let src = c.as_slice().to_vec();
    for (i, z) in c.as_mut_slice().iter_mut().enumerate() {
        *z = 0.5 * (src[i] + src[grid.conjugate_index(i)].conj());
    }
}

/// Deconvolution condition `|φ̂(k)| ≥ c|k|^{-ζ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeconParams {
    pub c: f64,
    pub zeta: f64,
}

/// Strictly positive probability density used as the initial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    repr: GridFunction,
    fourier: FourierCoeffs,
    phi_min: f64,
    decon: Option<DeconParams>,
    id: String,
}

impl InitialCondition {
    pub fn from_fourier(fourier: FourierCoeffs, id: impl Into<String>) -> Result<Self> {
        let grid = fourier.grid();
        let c0 = fourier.as_slice()[0];
        if (c0.re - 1.0).abs() > MASS_TOL || c0.im.abs() > MASS_TOL {
            return Err(Error::InvalidParameter(format!("initial condition has mass {c0}, expected 1")));
        }
        if fourier.conjugate_asymmetry() > 1e-12 {
            return Err(Error::InvalidParameter("initial condition is not real-valued".into()));
        }
        let repr = SpectralPlan::new(grid).from_fourier(&fourier);
        let phi_min = repr.min();
        if phi_min <= 0.0 {
            return Err(Error::Resolution(format!(
                "initial condition has minimum {phi_min:e} on grid {grid}; refine the grid"
            )));
        }
        Ok(InitialCondition { repr, fourier, phi_min, decon: None, id: id.into() })
    }

    /// From grid samples; values must be strictly positive with unit mean.
    pub fn from_grid(f: &GridFunction, id: impl Into<String>) -> Result<Self> {
        if f.min() <= 0.0 {
            return Err(Error::InvalidParameter(format!("initial condition minimum {:e} is not positive", f.min())));
        }
        let mut c = SpectralPlan::new(f.grid()).to_fourier(f);
        symmetrize(&mut c);
        InitialCondition::from_fourier(c, id)
    }

    pub fn uniform(grid: TorusGrid) -> Self {
        let mut c = FourierCoeffs::zeros(grid);
        c.as_mut_slice()[0] = Complex64::new(1.0, 0.0);
        InitialCondition {
            repr: GridFunction::constant(grid, 1.0),
            fourier: c,
            phi_min: 1.0,
            decon: None,
            id: "uniform".into(),
        }
    }

    /// `1 + a·(1/d)Σ_axis cos(2πx_axis)`; positive for `|a| < 1`.
    pub fn cosine(grid: TorusGrid, a: f64) -> Result<Self> {
        let d = grid.dim();
        let mut c = FourierCoeffs::zeros(grid);
        c.as_mut_slice()[0] = Complex64::new(1.0, 0.0);
        for axis in 0..d {
            for s in [1i64, -1] {
                let mut k = [0i64; 2];
                k[axis] = s;
                c.set(k, Complex64::new(0.5 * a / d as f64, 0.0))?;
            }
        }
        InitialCondition::from_fourier(c, format!("cosine:a={a}"))
    }

    pub fn with_decon(mut self, params: DeconParams) -> Self {
        self.decon = Some(params);
        self
    }

    pub fn grid(&self) -> TorusGrid {
        self.repr.grid()
    }

    pub fn repr(&self) -> &GridFunction {
        &self.repr
    }

    pub fn fourier(&self) -> &FourierCoeffs {
        &self.fourier
    }

    pub fn phi_min(&self) -> f64 {
        self.phi_min
    }

    pub fn decon_params(&self) -> Option<DeconParams> {
        self.decon
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// The heat flow of φ at time `t`, `e^{-4π²|k|²t} φ̂(k)`.
    pub fn heat_smoothed(&self, t: f64) -> GridFunction {
        let grid = self.grid();
        let coeffs = self
            .fourier
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, z)| z * (-4.0 * PI * PI * grid.freq_norm_sq(i) * t).exp())
            .collect();
        SpectralPlan::new(grid).from_fourier(&FourierCoeffs::new(grid, coeffs).expect("same grid"))
    }
}

/// The m-fold periodized Laplace density, `φ̂_m(k) = (1+2π²|k|²)^{-m}`.
pub fn periodized_laplace(m: u32, grid: TorusGrid) -> Result<InitialCondition> {
    if m == 0 {
        return Err(Error::InvalidParameter("laplace order m must be at least 1".into()));
    }
    let coeffs = (0..grid.len())
        .map(|i| Complex64::new((1.0 + 2.0 * PI * PI * grid.freq_norm_sq(i)).powi(-(m as i32)), 0.0))
        .collect();
    let phi = InitialCondition::from_fourier(FourierCoeffs::new(grid, coeffs)?, format!("laplace:m={m}"))?;
    // |φ̂(k)||k|^{2m} = (|k|²/(1+2π²|k|²))^m increases in |k|, so the tail
    // constant is attained at |k| = 1.
    let zeta = 2.0 * m as f64;
    let c = verify_decon(&phi, zeta).best_c;
    Ok(phi.with_decon(DeconParams { c, zeta }))
}

/// `W(x) = Σ a_k cos(2πk·x)`.
pub fn cosine_potential(amplitudes: &[(Freq, f64)], grid: TorusGrid) -> Result<Potential> {
    let mut c = FourierCoeffs::zeros(grid);
    let mut band = 0usize;
    for &(k, a) in amplitudes {
        if k == [0, 0] {
            return Err(Error::InvalidParameter("frequency 0 would give the potential a nonzero mean".into()));
        }
        let nyq = grid.nyquist() as i64;
        if k[0].abs() >= nyq || k[1].abs() >= nyq || (grid.dim() == 1 && k[1] != 0) {
            return Err(Error::Resolution(format!("frequency {k:?} not resolvable on grid {grid}")));
        }
        for kk in [k, [-k[0], -k[1]]] {
            let cur = c.at(kk);
            c.set(kk, cur + Complex64::new(0.5 * a, 0.0))?;
        }
        band = band.max(freq_norm(k).ceil() as usize);
    }
    let terms: Vec<String> = amplitudes
        .iter()
        .map(|(k, a)| if grid.dim() == 1 { format!("{}={a}", k[0]) } else { format!("{}.{}={a}", k[0], k[1]) })
        .collect();
    Potential::from_fourier(c, Some(band), format!("cos:{}", terms.join(",")))
}

/// Kuramoto-type potential `-s·Σ_axis cos(2πx_axis)`.
pub fn kuramoto(grid: TorusGrid, scale: f64) -> Result<Potential> {
    let amps: Vec<(Freq, f64)> = (0..grid.dim())
        .map(|a| {
            let mut k = [0i64; 2];
            k[a] = 1;
            (k, -scale)
        })
        .collect();
    let id = if scale == 1.0 { "kuramoto".to_string() } else { format!("kuramoto:scale={scale}") };
    Ok(cosine_potential(&amps, grid)?.with_id(id))
}

/// Random truth in `H^{α+1}`: `Ŵ(k) = (1+4π²|k|²)^{-(α+1)/2}(g₁ − i g₂)/√2`,
/// conjugate-symmetrized, `0 < |k| ≤ K`.
pub fn sobolev_random_potential(alpha: f64, band: usize, seed: u64, grid: TorusGrid) -> Result<Potential> {
    let d = grid.dim() as f64;
    if alpha <= d / 2.0 + 1.0 || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} must exceed d/2 + 1 = {}", d / 2.0 + 1.0)));
    }
    if band >= grid.nyquist() {
        return Err(Error::Resolution(format!(
            "band limit {band} must be below the Nyquist frequency {} of grid {grid}",
            grid.nyquist()
        )));
    }
    let mut r = rng(seed, 0);
    let mut c = FourierCoeffs::zeros(grid);
    for k in half_lattice(grid, band) {
        let w = (1.0 + 4.0 * PI * PI * (k[0] * k[0] + k[1] * k[1]) as f64).powf(-(alpha + 1.0) / 2.0);
        let a: f64 = StandardNormal.sample(&mut r);
        let b: f64 = StandardNormal.sample(&mut r);
        let z = Complex64::new(a, -b) * (w / 2f64.sqrt());
        c.set(k, z)?;
        c.set([-k[0], -k[1]], z.conj())?;
    }
    Potential::from_fourier(c, Some(band), format!("sobolev:alpha={alpha},K={band},seed={seed}"))
}

/// Result of checking `|φ̂(k)| ≥ c|k|^{-ζ}` on the retained frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeconCheck {
    pub holds: bool,
    pub best_c: f64,
}

/// `best_c = min_{k≠0} |φ̂(k)||k|^ζ`. On a finite grid the minimum is always
/// positive for strictly decaying coefficients, so the check additionally
/// requires that `|φ̂(k)||k|^ζ` does not degenerate towards the resolution
/// limit: its minimum over the outer half of the frequency band must be at
/// least its minimum over the inner half.
pub fn verify_decon(phi: &InitialCondition, zeta: f64) -> DeconCheck {
    let c = phi.fourier();
    let grid = c.grid();
    let kmax = (0..grid.len()).map(|i| grid.freq_norm_sq(i)).fold(0.0, f64::max).sqrt();
    let (mut inner, mut outer) = (f64::INFINITY, f64::INFINITY);
    for (k, z) in c.iter() {
        if k == [0, 0] {
            continue;
        }
        let r = freq_norm(k);
        let v = z.norm() * r.powf(zeta);
        if r <= kmax / 2.0 {
            inner = inner.min(v);
        } else {
            outer = outer.min(v);
        }
    }
    let best_c = inner.min(outer);
    let holds = best_c > 1e-14 && outer >= inner * (1.0 - 1e-12);
    DeconCheck { holds, best_c }
}

/// Resolves a potential id: `zero`, `kuramoto[:scale=s]`,
/// `cos:1=-1,3=0.2` (d = 1) or `cos:1.0=-1,0.1=-1` (d = 2),
/// `sobolev:alpha=…,K=…,seed=…`, `file:PATH` (Fourier CSV).
pub fn potential_from_id(id: &str, grid: TorusGrid) -> Result<Potential> {
    if let Some(path) = id.strip_prefix("file:") {
        let c = FourierCoeffs::read_csv(std::fs::File::open(Path::new(path))?, grid)?;
        return Potential::from_fourier(c, None, id);
    }
    let (name, map) = parse_id(id)?;
    let mut p = Params::new(id, map);
    let w = match name.as_str() {
        "zero" => Potential::zero(grid),
        "kuramoto" => {
            let s = p.take::<f64>("scale")?.unwrap_or(1.0);
            kuramoto(grid, s)?
        }
        "sobolev" => {
            let alpha = p.require("alpha")?;
            let band = p.require("K")?;
            let seed = p.require("seed")?;
            sobolev_random_potential(alpha, band, seed, grid)?
        }
        "cos" => {
            let mut amps = Vec::new();
            for (k, v) in std::mem::replace(&mut p, Params::new(id, Default::default())).into_map() {
                let a: f64 = v.parse().map_err(|_| Error::Parse(format!("bad amplitude {v:?} in {id:?}")))?;
                let parts: Vec<i64> = k
                    .split('.')
                    .map(|s| s.parse().map_err(|_| Error::Parse(format!("bad frequency {k:?} in {id:?}"))))
                    .collect::<Result<_>>()?;
                let freq = match parts.as_slice() {
                    [k1] => [*k1, 0],
                    [k1, k2] => [*k1, *k2],
                    _ => return Err(Error::Parse(format!("bad frequency {k:?} in {id:?}"))),
                };
                amps.push((freq, a));
            }
            cosine_potential(&amps, grid)?
        }
        other => return Err(Error::Parse(format!("unknown potential {other:?}"))),
    };
    p.finish()?;
    Ok(w)
}

/// Resolves an initial-condition id: `uniform`, `laplace:m=…`,
/// `cosine:a=…`, `file:PATH` (Fourier CSV).
pub fn initial_from_id(id: &str, grid: TorusGrid) -> Result<InitialCondition> {
    if let Some(path) = id.strip_prefix("file:") {
        let c = FourierCoeffs::read_csv(std::fs::File::open(Path::new(path))?, grid)?;
        return InitialCondition::from_fourier(c, id);
    }
    let (name, map) = parse_id(id)?;
    let mut p = Params::new(id, map);
    let phi = match name.as_str() {
        "uniform" => InitialCondition::uniform(grid),
        "laplace" => periodized_laplace(p.require("m")?, grid)?,
        "cosine" => InitialCondition::cosine(grid, p.require("a")?)?,
        other => return Err(Error::Parse(format!("unknown initial condition {other:?}"))),
    };
    p.finish()?;
    Ok(phi)
}
