//! Gaussian Fourier-series priors on mean-zero potentials.
//!
//! A draw is `W = Σ_j v_j e_j` in the real L²-orthonormal basis
//! `e = √2 cos(2πk·x), √2 sin(2πk·x)` over one half of the frequency lattice,
//! `0 < |k| ≤ K`, with independent `v_j ~ N(0, var_j / divisor²)`. In complex
//! form `Ŵ(k) = (a_k − i b_k)/√2` for cosine and sine coefficients `a_k, b_k`.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Potential;
use crate::spectral::{half_lattice, FourierCoeffs, Freq, TorusGrid};
use crate::util::rng;
use crate::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    /// Periodized Matérn: variance `(2π)^d (1+4π²|k|²)^{-(α+1)}`.
    Matern,
    /// variance `(1+4π²|k|²)^{-(α+1)}`.
    TruncatedFourier,
    /// variance `e^{-r|k|₁}`.
    ExpSeries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rescale {
    None,
    /// Divide by `√N δ_N`.
    #[serde(rename = "sqrtN_deltaN")]
    SqrtNDeltaN,
    /// Divide by `ln N`.
    #[serde(rename = "logN")]
    LogN,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSpec {
    pub kind: PriorKind,
    pub alpha: f64,
    pub r: f64,
    /// Band limit `K`; when absent, `K_N = ⌈N^{1/(2(α+1)+2β+d)}⌉`.
    #[serde(rename = "K")]
    pub band_limit: Option<usize>,
    pub rescale: Rescale,
    #[serde(rename = "N_for_rescale")]
    pub n_for_rescale: usize,
    pub beta_nominal: u32,
    pub symmetric_only: bool,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            kind: PriorKind::Matern,
            alpha: 2.5,
            r: 1.0,
            band_limit: None,
            rescale: Rescale::None,
            n_for_rescale: 1,
            beta_nominal: 4,
            symmetric_only: false,
        }
    }
}

/// `δ_N = N^{-(α+1+β)/(2(α+1)+2β+d)}`.
pub fn delta_n(alpha: f64, beta: f64, d: usize, n: usize) -> f64 {
    let e = (alpha + 1.0 + beta) / (2.0 * (alpha + 1.0) + 2.0 * beta + d as f64);
    (n as f64).powf(-e)
}

/// `θ = ((α+1+β)(β−2)/β − 3ζ/2) / (2(α+1)+2β+d)`.
pub fn theta_rate(alpha: f64, beta: f64, d: usize, zeta: f64) -> f64 {
    ((alpha + 1.0 + beta) * (beta - 2.0) / beta - 1.5 * zeta) / (2.0 * (alpha + 1.0) + 2.0 * beta + d as f64)
}

/// `K_N = ⌈N^{1/(2(α+1)+2β+d)}⌉`.
pub fn default_band_limit(alpha: f64, beta: f64, d: usize, n: usize) -> usize {
    (n as f64).powf(1.0 / (2.0 * (alpha + 1.0) + 2.0 * beta + d as f64)).ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BasisKind {
    Cos,
    Sin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BasisElement {
    pub freq: Freq,
    pub kind: BasisKind,
}

/// A coefficient vector in the real basis of a [`PriorModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector(pub Vec<f64>);

impl CoefficientVector {
    pub fn zeros(n: usize) -> Self {
        CoefficientVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// CSV `basis_id,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["basis_id", "value"])?;
        for (i, v) in self.0.iter().enumerate() {
            out.write_record(&[i.to_string(), v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        if rdr.headers()?.iter().collect::<Vec<_>>() != ["basis_id", "value"] {
            return Err(Error::Parse("expected header basis_id,value".into()));
        }
        let mut out = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let id: usize = rec[0].parse().map_err(|_| Error::Parse(format!("bad basis id {:?}", &rec[0])))?;
            if id != i {
                return Err(Error::Parse(format!("basis ids must be 0..n in order, got {id} at row {i}")));
            }
            out.push(rec[1].parse().map_err(|_| Error::Parse(format!("bad value {:?}", &rec[1])))?);
        }
        Ok(CoefficientVector(out))
    }
}

/// A [`PriorSpec`] resolved on a grid: basis, standard deviations, rescaling.
#[derive(Debug, Clone)]
pub struct PriorModel {
    spec: PriorSpec,
    grid: TorusGrid,
    band: usize,
    basis: Vec<BasisElement>,
    base_sd: Vec<f64>,
    divisor: f64,
}

impl PriorModel {
    pub fn new(spec: PriorSpec, grid: TorusGrid) -> Result<Self> {
        let d = grid.dim();
        if spec.kind != PriorKind::ExpSeries && !(spec.alpha > d as f64 / 2.0 + 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha = {} must exceed d/2 + 1 = {}",
                spec.alpha,
                d as f64 / 2.0 + 1.0
            )));
        }
        if spec.kind == PriorKind::ExpSeries && !(spec.r > 0.0) {
            return Err(Error::InvalidParameter(format!("decay r = {} must be positive", spec.r)));
        }
        if spec.n_for_rescale == 0 {
            return Err(Error::InvalidParameter("N_for_rescale must be at least 1".into()));
        }
        let band = spec
            .band_limit
            .unwrap_or_else(|| default_band_limit(spec.alpha, spec.beta_nominal as f64, d, spec.n_for_rescale));
        if band >= grid.nyquist() {
            return Err(Error::Resolution(format!(
                "band limit {band} must be below the Nyquist frequency {} of grid {grid}",
                grid.nyquist()
            )));
        }
        let mut basis = Vec::new();
        let mut base_sd = Vec::new();
        for k in half_lattice(grid, band) {
            let k2 = (k[0] * k[0] + k[1] * k[1]) as f64;
            let var = match spec.kind {
                PriorKind::Matern => (2.0 * PI).powi(d as i32) * (1.0 + 4.0 * PI * PI * k2).powf(-(spec.alpha + 1.0)),
                PriorKind::TruncatedFourier => (1.0 + 4.0 * PI * PI * k2).powf(-(spec.alpha + 1.0)),
                PriorKind::ExpSeries => (-spec.r * (k[0].abs() + k[1].abs()) as f64).exp(),
            };
            basis.push(BasisElement { freq: k, kind: BasisKind::Cos });
            base_sd.push(var.sqrt());
            if !spec.symmetric_only {
                basis.push(BasisElement { freq: k, kind: BasisKind::Sin });
                base_sd.push(var.sqrt());
            }
        }
        let n = spec.n_for_rescale;
        let divisor = match spec.rescale {
            Rescale::None => 1.0,
            Rescale::SqrtNDeltaN => (n as f64).sqrt() * delta_n(spec.alpha, spec.beta_nominal as f64, d, n),
            Rescale::LogN => {
                if n < 2 {
                    return Err(Error::InvalidParameter("logN rescaling needs N >= 2".into()));
                }
                (n as f64).ln()
            }
        };
        Ok(PriorModel { spec, grid, band, basis, base_sd, divisor })
    }

    pub fn spec(&self) -> &PriorSpec {
        &self.spec
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn band_limit(&self) -> usize {
        self.band
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[BasisElement] {
        &self.basis
    }

    /// Standard deviations before rescaling.
    pub fn base_sd(&self) -> &[f64] {
        &self.base_sd
    }

    pub fn divisor(&self) -> f64 {
        self.divisor
    }

    /// Prior standard deviation of coefficient `j` (after rescaling).
    pub fn sd(&self, j: usize) -> f64 {
        self.base_sd[j] / self.divisor
    }

    /// One prior draw from `r`.
    pub fn draw(&self, r: &mut ChaCha8Rng) -> CoefficientVector {
        CoefficientVector(
            self.base_sd
                .iter()
                .map(|s| {
                    let g: f64 = StandardNormal.sample(r);
                    g * s / self.divisor
                })
                .collect(),
        )
    }

    fn check_dim(&self, v: &CoefficientVector) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::InvalidParameter(format!(
                "coefficient vector has {} entries, prior basis has {}",
                v.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// The potential `Σ_j v_j e_j`.
    pub fn realize(&self, v: &CoefficientVector) -> Result<Potential> {
        self.check_dim(v)?;
        let mut c = FourierCoeffs::zeros(self.grid);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for (e, &val) in self.basis.iter().zip(&v.0) {
            let z = match e.kind {
                BasisKind::Cos => Complex64::new(val * s, 0.0),
                BasisKind::Sin => Complex64::new(0.0, -val * s),
            };
            let k = e.freq;
            let cur = c.at(k);
            c.set(k, cur + z)?;
            let cur = c.at([-k[0], -k[1]]);
            c.set([-k[0], -k[1]], cur + z.conj())?;
        }
        Potential::from_fourier(c, Some(self.band), "posterior")
    }

    /// Coefficients of the orthogonal projection of `w` onto the basis.
    pub fn project(&self, w: &Potential) -> Result<CoefficientVector> {
        self.grid.ensure_same(&w.grid())?;
        let s = std::f64::consts::SQRT_2;
        Ok(CoefficientVector(
            self.basis
                .iter()
                .map(|e| {
                    let z = w.fourier().at(e.freq);
                    match e.kind {
                        BasisKind::Cos => s * z.re,
                        BasisKind::Sin => -s * z.im,
                    }
                })
                .collect(),
        ))
    }

    /// Norm of the unrescaled prior's reproducing-kernel Hilbert space,
    /// `(Σ v_j² / var_j)^{1/2}`.
    pub fn rkhs_norm(&self, v: &CoefficientVector) -> Result<f64> {
        self.check_dim(v)?;
        Ok(v.0.iter().zip(&self.base_sd).map(|(x, s)| (x / s).powi(2)).sum::<f64>().sqrt())
    }
}

/// Seeded prior draw in both coefficient and function form.
pub fn sample_prior(spec: &PriorSpec, seed: u64, grid: TorusGrid) -> Result<(CoefficientVector, Potential)> {
    let model = PriorModel::new(*spec, grid)?;
    let v = model.draw(&mut rng(seed, 0));
    let w = model.realize(&v)?.with_id(format!("prior-draw:seed={seed}"));
    Ok((v, w))
}

pub fn rkhs_norm(spec: &PriorSpec, grid: TorusGrid, v: &CoefficientVector) -> Result<f64> {
    PriorModel::new(*spec, grid)?.rkhs_norm(v)
}
