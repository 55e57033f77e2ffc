//! Interacting particle system
//!
//! ```text
//! dX^i = −(1/n) Σ_{j≠i} ∇W(X^i − X^j) dt + √2 dB^i
//! ```
//!
//! on the torus, integrated by Euler–Maruyama, plus space-time histograms and
//! kernel density estimates of the particle cloud.
//!
//! Randomness: particle `i` owns ChaCha8 stream `i` of the run seed. Its
//! initial position and all of its Brownian increments come from that stream
//! in order, so results do not depend on the thread count.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{InitialCondition, Potential};
use crate::spectral::{FourierCoeffs, GridFunction, Point, SpectralPlan, TorusGrid};
use crate::util::{rng, wrap_unit};
use crate::Complex64;

/// Particle count from which [`DriftMethod::Auto`] switches to the mean-field path.
pub const MEAN_FIELD_THRESHOLD: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DriftMethod {
    /// Pairwise sum, `O(n²·modes)`.
    Direct,
    /// Empirical Fourier coefficients of the cloud, `O(n·modes)`.
    MeanField,
    #[default]
    Auto,
}

#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    dim: usize,
    positions: Vec<Point>,
    time: f64,
    rngs: Vec<ChaCha8Rng>,
}

impl ParticleEnsemble {
    /// Ensemble at explicit positions; particle `i` uses stream `i` of `seed`.
    pub fn from_positions(dim: usize, positions: Vec<Point>, seed: u64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidParameter("an ensemble needs at least one particle".into()));
        }
        let positions =
            positions.into_iter().map(|p| [wrap_unit(p[0]), if dim == 2 { wrap_unit(p[1]) } else { 0.0 }]).collect();
        let n = Vec::len(&positions);
        Ok(ParticleEnsemble { dim, positions, time: 0.0, rngs: (0..n as u64).map(|i| rng(seed, i)).collect() })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn time(&self) -> f64 {
        self.time
    }
}

/// Upper bound on a trigonometric polynomial, `Σ|ĉ(k)|`.
fn sup_bound(c: &FourierCoeffs) -> f64 {
    c.as_slice().iter().map(|z| z.norm()).sum()
}

/// Inverse-CDF sampler for a 1-d density. The CDF is evaluated exactly for
/// the trigonometric interpolant on a refined grid and inverted linearly
/// between refined nodes.
struct CdfTable {
    cdf: Vec<f64>,
}

impl CdfTable {
    fn new(phi: &FourierCoeffs) -> Self {
        let n = phi.grid().points_per_axis();
        let fine = (16 * n).max(4096);
        let fine_grid = TorusGrid::new(1, fine).expect("power of two");
        // Periodic antiderivative G with Ĝ(k) = φ̂(k)/(2πik); F(x) = x + G(x) − G(0).
        let mut g = vec![Complex64::new(0.0, 0.0); fine];
        let nyq = n as i64 / 2;
        for (k, z) in phi.iter() {
            let k = k[0];
            if k == 0 {
                continue;
            }
            let mut put = |kk: i64, v: Complex64| {
                let idx = kk.rem_euclid(fine as i64) as usize;
                g[idx] += v / Complex64::new(0.0, 2.0 * PI * kk as f64);
            };
            if k == nyq {
                // The Nyquist coefficient stands for cos(πnx): split it.
                put(nyq, 0.5 * z);
                put(-nyq, 0.5 * z);
            } else {
                put(k, z);
            }
        }
        SpectralPlan::new(fine_grid).inverse(&mut g);
        let g0 = g[0].re;
        let mut cdf: Vec<f64> = (0..=fine).map(|j| j as f64 / fine as f64 + g[j % fine].re - g0).collect();
        cdf[fine] = 1.0;
        // Guard against round-off making the table locally non-monotone.
        for j in 1..=fine {
            if cdf[j] < cdf[j - 1] {
                cdf[j] = cdf[j - 1];
            }
        }
        CdfTable { cdf }
    }

    fn invert(&self, u: f64) -> f64 {
        let fine = self.cdf.len() - 1;
        let j = self.cdf.partition_point(|&c| c <= u).clamp(1, fine);
        let (lo, hi) = (self.cdf[j - 1], self.cdf[j]);
        let frac = if hi > lo { (u - lo) / (hi - lo) } else { 0.5 };
        wrap_unit((j as f64 - 1.0 + frac) / fine as f64)
    }
}

/// Draws `n` i.i.d. positions from φ: inversion in d = 1, rejection against
/// `Σ|φ̂(k)|` in d = 2.
pub fn sample_initial(phi: &InitialCondition, n: usize, seed: u64) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(Error::InvalidParameter("particle count must be at least 1".into()));
    }
    let grid = phi.grid();
    let dim = grid.dim();
    let mut rngs: Vec<ChaCha8Rng> = (0..n as u64).map(|i| rng(seed, i)).collect();
    let positions: Vec<Point> = if dim == 1 {
        let table = CdfTable::new(phi.fourier());
        rngs.iter_mut().map(|r| [table.invert(r.random::<f64>()), 0.0]).collect()
    } else {
        let bound = sup_bound(phi.fourier());
        let coeffs = phi.fourier();
        rngs.par_iter_mut()
            .map(|r| loop {
                let x = [wrap_unit(r.random::<f64>()), wrap_unit(r.random::<f64>())];
                if r.random::<f64>() * bound <= coeffs.eval(x) {
                    break x;
                }
            })
            .collect()
    };
    Ok(ParticleEnsemble { dim, positions, time: 0.0, rngs })
}

/// The nonzero modes of `∇W`: `(k, 2πik_a Ŵ(k))` per axis.
struct GradModes {
    freqs: Vec<[f64; 2]>,
    coeffs: Vec<[Complex64; 2]>,
    self_term: [f64; 2],
}

impl GradModes {
    fn new(w: &Potential) -> Self {
        let grid = w.grid();
        let nyq = grid.nyquist() as i64;
        let mut freqs = Vec::new();
        let mut coeffs = Vec::new();
        for (k, z) in w.active_modes() {
            // The derivative symbol vanishes on Nyquist planes.
            let c = [0, 1].map(|a| {
                if a >= grid.dim() || k[a] == nyq {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, 2.0 * PI * k[a] as f64) * z
                }
            });
            if c[0].norm() > 0.0 || c[1].norm() > 0.0 {
                freqs.push([k[0] as f64, k[1] as f64]);
                coeffs.push(c);
            }
        }
        let self_term = [0, 1].map(|a| coeffs.iter().map(|c| c[a].re).sum());
        GradModes { freqs, coeffs, self_term }
    }

    fn phase(&self, m: usize, x: Point) -> Complex64 {
        let f = self.freqs[m];
        Complex64::from_polar(1.0, 2.0 * PI * (f[0] * x[0] + f[1] * x[1]))
    }

    /// `∇W(x)` by spectral interpolation.
    fn eval(&self, x: Point) -> [f64; 2] {
        let mut g = [0.0; 2];
        for m in 0..self.freqs.len() {
            let p = self.phase(m, x);
            g[0] += (self.coeffs[m][0] * p).re;
            g[1] += (self.coeffs[m][1] * p).re;
        }
        g
    }

    fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }
}

fn drift_direct(modes: &GradModes, pos: &[Point]) -> Vec<[f64; 2]> {
    let n = pos.len() as f64;
    pos.par_iter()
        .enumerate()
        .map(|(i, xi)| {
            let mut acc = [0.0; 2];
            for (j, xj) in pos.iter().enumerate() {
                if i != j {
                    let g = modes.eval([xi[0] - xj[0], xi[1] - xj[1]]);
                    acc[0] += g[0];
                    acc[1] += g[1];
                }
            }
            [-acc[0] / n, -acc[1] / n]
        })
        .collect()
}

/// `Σ_j ∇W(x − X^j) = Σ_k ĝ(k) e^{2πik·x} S(k)` with `S(k) = Σ_j e^{−2πik·X^j}`;
/// the `j = i` term `∇W(0)` is removed afterwards.
fn drift_mean_field(modes: &GradModes, pos: &[Point]) -> Vec<[f64; 2]> {
    let n = pos.len() as f64;
    // Sequential sums keep the result independent of the thread count.
    let sums: Vec<Complex64> =
        (0..modes.freqs.len()).map(|m| pos.iter().map(|x| modes.phase(m, *x).conj()).sum()).collect();
    pos.par_iter()
        .map(|x| {
            let mut acc = [0.0; 2];
            for (m, s) in sums.iter().enumerate() {
                let p = modes.phase(m, *x) * s;
                acc[0] += (modes.coeffs[m][0] * p).re;
                acc[1] += (modes.coeffs[m][1] * p).re;
            }
            [-(acc[0] - modes.self_term[0]) / n, -(acc[1] - modes.self_term[1]) / n]
        })
        .collect()
}

/// Interaction drift `−(1/n) Σ_{j≠i} ∇W(X^i − X^j)` for every particle.
pub fn interaction_drift(w: &Potential, ens: &ParticleEnsemble, method: DriftMethod) -> Vec<[f64; 2]> {
    let modes = GradModes::new(w);
    if modes.is_empty() {
        return vec![[0.0; 2]; ens.len()];
    }
    match method {
        DriftMethod::Direct => drift_direct(&modes, &ens.positions),
        DriftMethod::MeanField => drift_mean_field(&modes, &ens.positions),
        DriftMethod::Auto if ens.len() >= MEAN_FIELD_THRESHOLD => drift_mean_field(&modes, &ens.positions),
        DriftMethod::Auto => drift_direct(&modes, &ens.positions),
    }
}

/// One Euler–Maruyama step of size `h`; the drift uses the positions at the
/// start of the step.
pub fn em_step(ens: &ParticleEnsemble, w: &Potential, h: f64, method: DriftMethod) -> Result<ParticleEnsemble> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step h = {h} must be positive")));
    }
    let mut next = ens.clone();
    em_step_in_place(&mut next, w, h, method);
    Ok(next)
}

fn em_step_in_place(ens: &mut ParticleEnsemble, w: &Potential, h: f64, method: DriftMethod) {
    let drift = interaction_drift(w, ens, method);
    let sd = (2.0 * h).sqrt();
    let dim = ens.dim;
    ens.positions.par_iter_mut().zip(ens.rngs.par_iter_mut()).zip(drift.par_iter()).for_each(|((x, r), b)| {
        for a in 0..dim {
            let z: f64 = StandardNormal.sample(r);
            x[a] = wrap_unit(x[a] + h * b[a] + sd * z);
        }
    });
    ens.time += h;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub time: f64,
    pub positions: Vec<Point>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub steps: usize,
    pub snapshot_every: usize,
    pub method: DriftMethod,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig { n: 1000, horizon: 0.25, steps: 256, snapshot_every: 16, method: DriftMethod::Auto }
    }
}

/// Samples φ and runs `steps` Euler–Maruyama steps; snapshots are taken at
/// t = 0 and after every `snapshot_every` steps.
pub fn simulate(w: &Potential, phi: &InitialCondition, cfg: &SimulationConfig, seed: u64) -> Result<Vec<Snapshot>> {
    if cfg.steps == 0 || cfg.snapshot_every == 0 {
        return Err(Error::InvalidParameter("steps and snapshot_every must be positive".into()));
    }
    if !(cfg.horizon > 0.0) {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    w.grid().ensure_same(&phi.grid())?;
    let h = cfg.horizon / cfg.steps as f64;
    let mut ens = sample_initial(phi, cfg.n, seed)?;
    let mut out = vec![Snapshot { time: 0.0, positions: ens.positions.clone() }];
    for s in 1..=cfg.steps {
        em_step_in_place(&mut ens, w, h, cfg.method);
        if s % cfg.snapshot_every == 0 {
            out.push(Snapshot { time: s as f64 * h, positions: ens.positions.clone() });
        }
    }
    Ok(out)
}

/// CSV `t,particle_id,x1[,x2]`.
pub fn write_snapshots_csv<W: Write>(snapshots: &[Snapshot], dim: usize, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if dim == 1 {
        out.write_record(["t", "particle_id", "x1"])?;
    } else {
        out.write_record(["t", "particle_id", "x1", "x2"])?;
    }
    for s in snapshots {
        for (i, x) in s.positions.iter().enumerate() {
            let mut row = vec![s.time.to_string(), i.to_string(), x[0].to_string()];
            if dim == 2 {
                row.push(x[1].to_string());
            }
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Space-time occupation counts. Time bins split `[0, T]` evenly (the last
/// bin closed); space bins are the cells `(j/S, (j+1)/S]` per axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramData {
    pub dim: usize,
    pub horizon: f64,
    pub time_bins: usize,
    pub space_bins_per_axis: usize,
    /// Row-major over (time bin, x1 bin[, x2 bin]).
    pub counts: Vec<u64>,
    pub snapshots_per_bin: Vec<usize>,
    pub particles: usize,
}

impl HistogramData {
    pub fn space_cells(&self) -> usize {
        self.space_bins_per_axis.pow(self.dim as u32)
    }

    pub fn bin_volume(&self) -> f64 {
        (1.0 / self.space_bins_per_axis as f64).powi(self.dim as i32)
    }

    /// Particle-snapshot count per unit volume for time bin `tb`.
    pub fn normalizer(&self, tb: usize) -> f64 {
        (self.snapshots_per_bin[tb] * self.particles) as f64 * self.bin_volume()
    }

    pub fn count(&self, tb: usize, cell: usize) -> u64 {
        self.counts[tb * self.space_cells() + cell]
    }

    pub fn density(&self, tb: usize, cell: usize) -> f64 {
        self.count(tb, cell) as f64 / self.normalizer(tb)
    }

    /// CSV `t_bin,x_bin` (d = 1) or `t_bin,x1_bin,x2_bin` (d = 2), then `count,density`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        if self.dim == 1 {
            out.write_record(["t_bin", "x_bin", "count", "density"])?;
        } else {
            out.write_record(["t_bin", "x1_bin", "x2_bin", "count", "density"])?;
        }
        let s = self.space_bins_per_axis;
        for tb in 0..self.time_bins {
            for cell in 0..self.space_cells() {
                let mut row = vec![tb.to_string()];
                if self.dim == 1 {
                    row.push(cell.to_string());
                } else {
                    row.push((cell / s).to_string());
                    row.push((cell % s).to_string());
                }
                row.push(self.count(tb, cell).to_string());
                row.push(self.density(tb, cell).to_string());
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn space_bin(x: f64, s: usize) -> usize {
    ((x * s as f64).ceil() as usize).clamp(1, s) - 1
}

pub fn time_bin(t: f64, horizon: f64, bins: usize) -> usize {
    if horizon <= 0.0 {
        0
    } else {
        ((t / horizon * bins as f64).floor() as usize).min(bins - 1)
    }
}

/// Bins the snapshots; the horizon is the last snapshot time.
pub fn bin_histogram(snapshots: &[Snapshot], dim: usize, time_bins: usize, space_bins: usize) -> Result<HistogramData> {
    if snapshots.is_empty() {
        return Err(Error::Empty("no snapshots to bin".into()));
    }
    if time_bins == 0 || space_bins == 0 {
        return Err(Error::InvalidParameter("bin counts must be positive".into()));
    }
    let particles = snapshots[0].positions.len();
    if snapshots.iter().any(|s| s.positions.len() != particles) {
        return Err(Error::InvalidParameter("snapshots have different particle counts".into()));
    }
    let horizon = snapshots.iter().map(|s| s.time).fold(0.0, f64::max);
    let cells = space_bins.pow(dim as u32);
    let mut counts = vec![0u64; time_bins * cells];
    let mut per_bin = vec![0usize; time_bins];
    for s in snapshots {
        let tb = time_bin(s.time, horizon, time_bins);
        per_bin[tb] += 1;
        for x in &s.positions {
            let mut cell = space_bin(x[0], space_bins);
            if dim == 2 {
                cell = cell * space_bins + space_bin(x[1], space_bins);
            }
            counts[tb * cells + cell] += 1;
        }
    }
    if let Some(tb) = per_bin.iter().position(|&c| c == 0) {
        return Err(Error::Empty(format!("time bin {tb} contains no snapshots")));
    }
    Ok(HistogramData {
        dim,
        horizon,
        time_bins,
        space_bins_per_axis: space_bins,
        counts,
        snapshots_per_bin: per_bin,
        particles,
    })
}

/// Averages of the trigonometric interpolant over the cells `(j/S, (j+1)/S]`,
/// computed exactly in Fourier space. `S` must divide the grid size.
pub fn cell_averages(c: &FourierCoeffs, space_bins: usize) -> Result<Vec<f64>> {
    let grid = c.grid();
    let n = grid.points_per_axis();
    if space_bins == 0 || !n.is_multiple_of(space_bins) {
        return Err(Error::InvalidParameter(format!("{space_bins} space bins do not divide grid {grid}")));
    }
    let w = 1.0 / space_bins as f64;
    let factor = |k: i64| -> Complex64 {
        if k == 0 {
            Complex64::new(1.0, 0.0)
        } else {
            let a = Complex64::new(0.0, 2.0 * PI * k as f64 * w);
            (a.exp() - 1.0) / a
        }
    };
    let coeffs: Vec<Complex64> = c
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let k = grid.freq(i);
            let mut f = factor(k[0]);
            if grid.dim() == 2 {
                f *= factor(k[1]);
            }
            z * f
        })
        .collect();
    let g = SpectralPlan::new(grid).from_fourier(&FourierCoeffs::new(grid, coeffs)?);
    let stride = n / space_bins;
    let v = g.values();
    Ok(match grid.dim() {
        1 => (0..space_bins).map(|j| v[j * stride]).collect(),
        _ => {
            (0..space_bins * space_bins).map(|c| v[(c / space_bins) * stride * n + (c % space_bins) * stride]).collect()
        }
    })
}

/// Wrapped-Gaussian kernel density estimate of a particle cloud on `grid`,
/// from the exact empirical Fourier coefficients.
pub fn kde(positions: &[Point], grid: TorusGrid, bandwidth: f64) -> Result<GridFunction> {
    if positions.is_empty() {
        return Err(Error::Empty("no particles".into()));
    }
    let n = positions.len() as f64;
    let coeffs: Vec<Complex64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let k = grid.freq(i);
            // Nyquist terms are dropped to keep the estimate real.
            if k[0].unsigned_abs() as usize == grid.nyquist() || k[1].unsigned_abs() as usize == grid.nyquist() {
                return Complex64::new(0.0, 0.0);
            }
            let damp = (-2.0 * PI * PI * bandwidth * bandwidth * grid.freq_norm_sq(i)).exp();
            if damp < 1e-300 {
                return Complex64::new(0.0, 0.0);
            }
            let s: Complex64 = positions
                .iter()
                .map(|x| Complex64::from_polar(1.0, -2.0 * PI * (k[0] as f64 * x[0] + k[1] as f64 * x[1])))
                .sum();
            s * (damp / n)
        })
        .collect();
    Ok(SpectralPlan::new(grid).from_fourier(&FourierCoeffs::new(grid, coeffs)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{kuramoto, periodized_laplace, sobolev_random_potential};

    fn g1(n: usize) -> TorusGrid {
        TorusGrid::new(1, n).unwrap()
    }

    #[test]
    fn uniform_sampling() {
        let phi = InitialCondition::uniform(g1(32));
        let n = 10_000;
        let ens = sample_initial(&phi, n, 3).unwrap();
        let mean = ens.positions().iter().map(|p| p[0]).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 4.0 / (n as f64).sqrt());
        let again = sample_initial(&phi, n, 3).unwrap();
        assert_eq!(ens.positions(), again.positions());
        let phi2 = InitialCondition::uniform(TorusGrid::new(2, 16).unwrap());
        let ens = sample_initial(&phi2, n, 3).unwrap();
        for a in 0..2 {
            let mean = ens.positions().iter().map(|p| p[a]).sum::<f64>() / n as f64;
            assert!((mean - 0.5).abs() < 4.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn laplace_sampling_ks() {
        // KS distance against the CDF of the interpolant integrated by a
        // fine midpoint rule (independent of the sampler's table).
        let grid = g1(64);
        let phi = periodized_laplace(1, grid).unwrap();
        let n = 100_000;
        let mut xs: Vec<f64> = sample_initial(&phi, n, 11).unwrap().positions().iter().map(|p| p[0]).collect();
        xs.sort_by(|a, b| a.total_cmp(b));
        let m = 20_000;
        let mut cdf = vec![0.0; m + 1];
        for j in 0..m {
            cdf[j + 1] = cdf[j] + phi.fourier().eval([(j as f64 + 0.5) / m as f64, 0.0]) / m as f64;
        }
        let f_at = |x: f64| {
            let s = x * m as f64;
            let j = (s.floor() as usize).min(m - 1);
            cdf[j] + (s - j as f64) * (cdf[j + 1] - cdf[j])
        };
        let mut ks: f64 = 0.0;
        for (i, x) in xs.iter().enumerate() {
            let f = f_at(*x);
            ks = ks.max((f - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - f).abs());
        }
        assert!(ks <= 1.63 / (n as f64).sqrt(), "KS = {ks}");
    }

    #[test]
    fn brownian_increments() {
        let grid = g1(16);
        let ens = sample_initial(&InitialCondition::uniform(grid), 250_000, 5).unwrap();
        let h = 1e-3;
        let mut var = 0.0;
        let mut count = 0.0;
        let mut cur = ens;
        for _ in 0..4 {
            let next = em_step(&cur, &Potential::zero(grid), h, DriftMethod::Auto).unwrap();
            for (a, b) in cur.positions().iter().zip(next.positions()) {
                let mut d = b[0] - a[0];
                d -= d.round();
                var += d * d;
                count += 1.0;
            }
            cur = next;
        }
        var /= count;
        assert!((var / (2.0 * h) - 1.0).abs() < 0.05, "variance ratio {}", var / (2.0 * h));
    }

    #[test]
    fn coincident_pair_has_no_drift() {
        let grid = g1(32);
        let w = kuramoto(grid, 1.0).unwrap();
        let ens = ParticleEnsemble::from_positions(1, vec![[0.3, 0.0], [0.3, 0.0]], 1).unwrap();
        for m in [DriftMethod::Direct, DriftMethod::MeanField] {
            let d = interaction_drift(&w, &ens, m);
            assert!(d.iter().all(|v| v[0].abs() < 1e-14));
        }
    }

    #[test]
    fn mean_field_matches_direct() {
        for grid in [g1(64), TorusGrid::new(2, 16).unwrap()] {
            let w = sobolev_random_potential(2.5, 5, 2, grid).unwrap();
            let ens = sample_initial(&InitialCondition::uniform(grid), 500, 9).unwrap();
            let a = interaction_drift(&w, &ens, DriftMethod::Direct);
            let b = interaction_drift(&w, &ens, DriftMethod::MeanField);
            let err = a.iter().zip(&b).map(|(p, q)| (p[0] - q[0]).abs().max((p[1] - q[1]).abs())).fold(0.0, f64::max);
            assert!(err < 1e-11, "{err}");
        }
    }

    #[test]
    fn uniform_cloud_has_small_mean_drift() {
        let grid = g1(32);
        let n = 20_000;
        let ens = sample_initial(&InitialCondition::uniform(grid), n, 21).unwrap();
        let d = interaction_drift(&kuramoto(grid, 1.0).unwrap(), &ens, DriftMethod::Auto);
        let mean = d.iter().map(|v| v[0]).sum::<f64>() / n as f64;
        assert!(mean.abs() <= 5.0 / (n as f64).sqrt());
    }

    #[test]
    fn positions_stay_on_torus_and_are_deterministic() {
        let grid = TorusGrid::new(2, 16).unwrap();
        let w = kuramoto(grid, 1.0).unwrap();
        let phi = periodized_laplace(2, grid).unwrap();
        let cfg = SimulationConfig { n: 300, horizon: 0.5, steps: 40, snapshot_every: 7, method: DriftMethod::Auto };
        let a = simulate(&w, &phi, &cfg, 4).unwrap();
        assert_eq!(a.len(), 40 / 7 + 1);
        assert_eq!(a[0].time, 0.0);
        for s in &a {
            assert!(s.positions.iter().all(|p| p.iter().all(|c| *c > 0.0 && *c <= 1.0)));
        }
        assert_eq!(a, simulate(&w, &phi, &cfg, 4).unwrap());
        assert_ne!(a, simulate(&w, &phi, &cfg, 5).unwrap());
    }

    #[test]
    fn thread_count_does_not_matter() {
        let grid = g1(32);
        let w = kuramoto(grid, 1.0).unwrap();
        let phi = periodized_laplace(1, grid).unwrap();
        let cfg = SimulationConfig { n: 2500, horizon: 0.1, steps: 10, snapshot_every: 5, method: DriftMethod::Auto };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate(&w, &phi, &cfg, 8).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn histogram_counts() {
        let snaps = vec![Snapshot { time: 0.0, positions: vec![[0.1, 0.0]] }];
        let h = bin_histogram(&snaps, 1, 1, 4).unwrap();
        assert_eq!(h.counts, vec![1, 0, 0, 0]);
        assert_eq!(h.density(0, 0), 4.0);
        let snaps = vec![Snapshot { time: 0.0, positions: vec![[0.25, 0.0], [0.26, 0.0], [1.0, 0.0]] }];
        assert_eq!(bin_histogram(&snaps, 1, 1, 4).unwrap().counts, vec![1, 1, 0, 1]);
        // Two time bins but both snapshots land in the first.
        let snaps = vec![
            Snapshot { time: 0.0, positions: vec![[0.5, 0.0]] },
            Snapshot { time: 0.0, positions: vec![[0.5, 0.0]] },
        ];
        assert!(matches!(bin_histogram(&snaps, 1, 2, 4), Err(Error::Empty(_))));
        assert!(bin_histogram(&[], 1, 1, 4).is_err());
    }

    #[test]
    fn uniform_histogram_density() {
        let grid = g1(32);
        let cfg = SimulationConfig { n: 20_000, horizon: 0.1, steps: 20, snapshot_every: 5, method: DriftMethod::Auto };
        let snaps = simulate(&Potential::zero(grid), &InitialCondition::uniform(grid), &cfg, 2).unwrap();
        let hist = bin_histogram(&snaps, 1, 1, 8).unwrap();
        let total: u64 = hist.counts.iter().sum();
        assert_eq!(total as usize, snaps.len() * cfg.n);
        let per_bin = total as f64 / 8.0;
        for c in 0..8 {
            assert!((hist.density(0, c) - 1.0).abs() < 4.0 / per_bin.sqrt());
        }
    }

    #[test]
    fn cell_averages_are_exact() {
        let grid = g1(32);
        let phi = InitialCondition::cosine(grid, 0.5).unwrap();
        let avg = cell_averages(phi.fourier(), 4).unwrap();
        for (j, v) in avg.iter().enumerate() {
            let (a, b) = (j as f64 / 4.0, (j + 1) as f64 / 4.0);
            let exact = 1.0 + 0.5 * ((2.0 * PI * b).sin() - (2.0 * PI * a).sin()) / (2.0 * PI) * 4.0;
            assert!((v - exact).abs() < 1e-14);
        }
        assert!(cell_averages(phi.fourier(), 3).is_err());
    }

    #[test]
    fn kde_integrates_to_one() {
        let grid = g1(64);
        let ens = sample_initial(&periodized_laplace(2, grid).unwrap(), 2000, 1).unwrap();
        let f = kde(ens.positions(), grid, 0.05).unwrap();
        assert!((f.mean() - 1.0).abs() < 1e-12);
    }
}
