//! Uniform periodic grids on the unit torus and the discrete Fourier calculus
//! built on them.
//!
//! Conventions: grid node `j` along an axis sits at `x_j = j / n`; the Fourier
//! coefficient of `f` at integer frequency `k` is `∫ f(x) exp(-2πi k·x) dx`,
//! approximated by the normalised DFT so that the zero mode equals the mean.
//! Retained frequencies have every component in `(-n/2, n/2]`, stored in the
//! usual FFT order (same flat layout as the grid values, row-major with the
//! first axis slowest).

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the torus. Components beyond the grid dimension are ignored.
pub type Point = [f64; 2];

/// An integer frequency vector. For `d = 1` the second component is zero.
pub type Freq = [i64; 2];

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct GridParams {
    dim: usize,
    points_per_axis: usize,
}

/// Uniform grid on the unit torus `(0,1]^d`, `d ∈ {1, 2}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "GridParams", into = "GridParams")]
pub struct TorusGrid {
    dim: usize,
    points_per_axis: usize,
}

impl TryFrom<GridParams> for TorusGrid {
    type Error = Error;
    fn try_from(p: GridParams) -> Result<Self> {
        TorusGrid::new(p.dim, p.points_per_axis)
    }
}

impl From<TorusGrid> for GridParams {
    fn from(g: TorusGrid) -> Self {
        GridParams { dim: g.dim, points_per_axis: g.points_per_axis }
    }
}

impl std::fmt::Display for TorusGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.dim == 1 {
            write!(f, "{}", self.points_per_axis)
        } else {
            write!(f, "{}x{}", self.points_per_axis, self.points_per_axis)
        }
    }
}

impl TorusGrid {
    pub fn new(dim: usize, points_per_axis: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if points_per_axis < 4 || !points_per_axis.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be a power of two >= 4, got {points_per_axis}"
            )));
        }
        Ok(TorusGrid { dim, points_per_axis })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    /// Total number of nodes, `n^d`.
    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.points_per_axis as f64
    }

    /// Volume of one grid cell, `spacing^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn nyquist(&self) -> usize {
        self.points_per_axis / 2
    }

    pub fn node(&self, idx: usize) -> Point {
        let n = self.points_per_axis;
        let h = self.spacing();
        match self.dim {
            1 => [idx as f64 * h, 0.0],
            _ => [(idx / n) as f64 * h, (idx % n) as f64 * h],
        }
    }

    fn axis_freq(&self, j: usize) -> i64 {
        let n = self.points_per_axis;
        if j <= n / 2 {
            j as i64
        } else {
            j as i64 - n as i64
        }
    }

    /// Frequency vector stored at flat index `idx`.
    pub fn freq(&self, idx: usize) -> Freq {
        let n = self.points_per_axis;
        match self.dim {
            1 => [self.axis_freq(idx), 0],
            _ => [self.axis_freq(idx / n), self.axis_freq(idx % n)],
        }
    }

    /// Flat index of frequency `k`, or `None` when `k` is not retained.
    pub fn index_of(&self, k: Freq) -> Option<usize> {
        let n = self.points_per_axis as i64;
        let half = n / 2;
        let axis = |c: i64| -> Option<usize> {
            if c > -half && c <= half {
                Some(c.rem_euclid(n) as usize)
            } else {
                None
            }
        };
        match self.dim {
            1 if k[1] == 0 => axis(k[0]),
            1 => None,
            _ => Some(axis(k[0])? * n as usize + axis(k[1])?),
        }
    }

    /// Flat index holding the frequency `-k` (aliased onto the grid).
    pub fn conjugate_index(&self, idx: usize) -> usize {
        let n = self.points_per_axis;
        let neg = |j: usize| (n - j) % n;
        match self.dim {
            1 => neg(idx),
            _ => neg(idx / n) * n + neg(idx % n),
        }
    }

    /// `|k|²` for the frequency at `idx`.
    pub fn freq_norm_sq(&self, idx: usize) -> f64 {
        let k = self.freq(idx);
        (k[0] * k[0] + k[1] * k[1]) as f64
    }

    /// `(1 + 4π²|k|²)` for every retained frequency, in storage order.
    pub fn sobolev_weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| 1.0 + 4.0 * PI * PI * self.freq_norm_sq(i)).collect()
    }

    /// Fourier symbol `2πi k_axis` of the partial derivative. The symbol is
    /// zeroed on the Nyquist plane of that axis so derivatives of real
    /// functions stay real.
    pub fn derivative_symbols(&self, axis: usize) -> Vec<Complex64> {
        let nyq = self.nyquist() as i64;
        (0..self.len())
            .map(|i| {
                let k = self.freq(i)[axis];
                if k == nyq {
                    ZERO
                } else {
                    Complex64::new(0.0, 2.0 * PI * k as f64)
                }
            })
            .collect()
    }

    /// Two-thirds rule: true for frequencies kept after a pointwise product.
    pub fn dealias_mask(&self) -> Vec<bool> {
        let cutoff = self.points_per_axis as f64 / 3.0;
        (0..self.len())
            .map(|i| {
                let k = self.freq(i);
                (0..self.dim).all(|a| (k[a].abs() as f64) <= cutoff)
            })
            .collect()
    }

    pub fn ensure_same(&self, other: &TorusGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch { left: format!("{self:?}"), right: format!("{other:?}") })
        }
    }
}

/// Cached FFT plans for one grid. Forward transforms are normalised by
/// `1/len` so the zero mode is the mean.
pub struct SpectralPlan {
    grid: TorusGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    column: Vec<Complex64>,
}

impl SpectralPlan {
    pub fn new(grid: TorusGrid) -> Self {
        let n = grid.points_per_axis();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        SpectralPlan { grid, forward, inverse, scratch: vec![ZERO; scratch_len], column: vec![ZERO; n] }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    fn run(&mut self, data: &mut [Complex64], forward: bool) {
        assert_eq!(data.len(), self.grid.len(), "buffer does not match grid");
        let fft = if forward { self.forward.clone() } else { self.inverse.clone() };
        // Contiguous rows (last axis) in one batched call.
        fft.process_with_scratch(data, &mut self.scratch);
        if self.grid.dim() == 2 {
            let n = self.grid.points_per_axis();
            for c in 0..n {
                for r in 0..n {
                    self.column[r] = data[r * n + c];
                }
                fft.process_with_scratch(&mut self.column, &mut self.scratch);
                for r in 0..n {
                    data[r * n + c] = self.column[r];
                }
            }
        }
    }

    /// In-place forward transform (values → normalised coefficients).
    pub fn forward(&mut self, data: &mut [Complex64]) {
        self.run(data, true);
        let scale = 1.0 / self.grid.len() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    /// In-place inverse transform (coefficients → values).
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        self.run(data, false);
    }

    /// Real values to coefficients, written into `out`.
    pub fn forward_real(&mut self, values: &[f64], out: &mut Vec<Complex64>) {
        out.clear();
        out.extend(values.iter().map(|&v| Complex64::new(v, 0.0)));
        self.forward(out);
    }

    /// Coefficients to real values (imaginary round-off discarded).
    pub fn inverse_real(&mut self, coeffs: &[Complex64], buf: &mut Vec<Complex64>, out: &mut [f64]) {
        buf.clear();
        buf.extend_from_slice(coeffs);
        self.inverse(buf);
        for (o, c) in out.iter_mut().zip(buf.iter()) {
            *o = c.re;
        }
    }

    pub fn to_fourier(&mut self, f: &GridFunction) -> FourierCoeffs {
        assert_eq!(f.grid, self.grid);
        let mut buf = Vec::with_capacity(f.values.len());
        self.forward_real(&f.values, &mut buf);
        FourierCoeffs { grid: self.grid, coeffs: buf }
    }

    pub fn from_fourier(&mut self, c: &FourierCoeffs) -> GridFunction {
        assert_eq!(c.grid, self.grid);
        let mut buf = Vec::with_capacity(c.coeffs.len());
        let mut values = vec![0.0; c.coeffs.len()];
        self.inverse_real(&c.coeffs, &mut buf, &mut values);
        GridFunction { grid: self.grid, values }
    }
}

/// Real function sampled at the nodes of a [`TorusGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} values for grid {grid}, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite value at node {i}")));
        }
        Ok(GridFunction { grid, values })
    }

    /// Samples `f` at every node. `f` must return finite values.
    pub fn from_fn(grid: TorusGrid, f: impl Fn(Point) -> f64) -> Self {
        let values: Vec<f64> = (0..grid.len()).map(|i| f(grid.node(i))).collect();
        debug_assert!(values.iter().all(|v| v.is_finite()));
        GridFunction { grid, values }
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        GridFunction { grid, values: vec![c; grid.len()] }
    }

    pub(crate) fn from_raw(grid: TorusGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        GridFunction { grid, values }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Integral over the torus (rectangle rule, which is the periodic trapezoid rule).
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() / self.values.len() as f64
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_with(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Result<GridFunction> {
        self.grid.ensure_same(&other.grid)?;
        Ok(GridFunction {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> GridFunction {
        self.map(|v| v * s)
    }

    /// CSV with header `x1[,x2],value`, nodes in row-major order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        if self.grid.dim() == 1 {
            out.write_record(["x1", "value"])?;
        } else {
            out.write_record(["x1", "x2", "value"])?;
        }
        for (i, v) in self.values.iter().enumerate() {
            let x = self.grid.node(i);
            if self.grid.dim() == 1 {
                out.write_record(&[x[0].to_string(), v.to_string()])?;
            } else {
                out.write_record(&[x[0].to_string(), x[1].to_string(), v.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the format written by [`GridFunction::write_csv`]; the grid is
    /// inferred from the header and the row count.
    pub fn read_csv<R: Read>(r: R) -> Result<GridFunction> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let dim = match header.iter().collect::<Vec<_>>().as_slice() {
            ["x1", "value"] => 1,
            ["x1", "x2", "value"] => 2,
            other => return Err(Error::Parse(format!("unexpected grid function header {other:?}"))),
        };
        let mut coords = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let nums = parse_fields(&rec)?;
            coords.push([nums[0], if dim == 2 { nums[1] } else { 0.0 }]);
            values.push(nums[dim]);
        }
        let n = match dim {
            1 => values.len(),
            _ => (values.len() as f64).sqrt().round() as usize,
        };
        let grid = TorusGrid::new(dim, n)?;
        if grid.len() != values.len() {
            return Err(Error::Parse(format!("{} rows do not form a square grid", values.len())));
        }
        for (i, c) in coords.iter().enumerate() {
            let node = grid.node(i);
            if (0..dim).any(|a| (node[a] - c[a]).abs() > 1e-9) {
                return Err(Error::Parse(format!("row {i} is not at grid node {node:?}")));
            }
        }
        GridFunction::new(grid, values)
    }
}

fn parse_fields(rec: &csv::StringRecord) -> Result<Vec<f64>> {
    rec.iter().map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}")))).collect()
}

/// Discrete Fourier coefficients on the retained frequency box.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierCoeffs {
    grid: TorusGrid,
    coeffs: Vec<Complex64>,
}

impl FourierCoeffs {
    pub fn new(grid: TorusGrid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} coefficients for grid {grid}, got {}",
                grid.len(),
                coeffs.len()
            )));
        }
        Ok(FourierCoeffs { grid, coeffs })
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        FourierCoeffs { grid, coeffs: vec![ZERO; grid.len()] }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.coeffs
    }

    /// Coefficient at `k`; zero for frequencies outside the retained box.
    pub fn at(&self, k: Freq) -> Complex64 {
        self.grid.index_of(k).map_or(ZERO, |i| self.coeffs[i])
    }

    pub fn set(&mut self, k: Freq, value: Complex64) -> Result<()> {
        let i = self
            .grid
            .index_of(k)
            .ok_or_else(|| Error::InvalidParameter(format!("frequency {k:?} not on grid {}", self.grid)))?;
        self.coeffs[i] = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (Freq, Complex64)> + '_ {
        self.coeffs.iter().enumerate().map(|(i, &c)| (self.grid.freq(i), c))
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    /// Largest deviation from conjugate symmetry `c(-k) = conj(c(k))`.
    pub fn conjugate_asymmetry(&self) -> f64 {
        (0..self.coeffs.len())
            .map(|i| (self.coeffs[self.grid.conjugate_index(i)] - self.coeffs[i].conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Trigonometric interpolant `Re Σ c(k) exp(2πi k·x)` at an arbitrary point.
    pub fn eval(&self, x: Point) -> f64 {
        let n = self.grid.points_per_axis();
        let p1 = axis_phases(x[0], n);
        match self.grid.dim() {
            1 => self.coeffs.iter().zip(&p1).map(|(c, p)| c.re * p.re - c.im * p.im).sum(),
            _ => {
                let p2 = axis_phases(x[1], n);
                let mut acc = 0.0;
                for (r, pr) in p1.iter().enumerate() {
                    let row = &self.coeffs[r * n..(r + 1) * n];
                    let mut row_acc = ZERO;
                    for (c, pc) in row.iter().zip(&p2) {
                        row_acc += c * pc;
                    }
                    let t = row_acc * pr;
                    acc += t.re;
                }
                acc
            }
        }
    }

    /// CSV with header `k1[,k2],re,im`, one row per retained frequency.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let d = self.grid.dim();
        if d == 1 {
            out.write_record(["k1", "re", "im"])?;
        } else {
            out.write_record(["k1", "k2", "re", "im"])?;
        }
        for (k, c) in self.iter() {
            let mut row: Vec<String> = k[..d].iter().map(|v| v.to_string()).collect();
            row.push(c.re.to_string());
            row.push(c.im.to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads coefficients onto `grid`; frequencies missing from the file are zero.
    pub fn read_csv<R: Read>(r: R, grid: TorusGrid) -> Result<FourierCoeffs> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let dim = match header.iter().collect::<Vec<_>>().as_slice() {
            ["k1", "re", "im"] => 1,
            ["k1", "k2", "re", "im"] => 2,
            other => return Err(Error::Parse(format!("unexpected Fourier header {other:?}"))),
        };
        if dim != grid.dim() {
            return Err(Error::Parse(format!("file is {dim}-dimensional, grid is {}", grid.dim())));
        }
        let mut out = FourierCoeffs::zeros(grid);
        for rec in rdr.records() {
            let rec = rec?;
            let nums = parse_fields(&rec)?;
            let k = [nums[0] as i64, if dim == 2 { nums[1] as i64 } else { 0 }];
            out.set(k, Complex64::new(nums[dim], nums[dim + 1]))?;
        }
        Ok(out)
    }
}

/// `exp(2πi k x)` for the axis frequencies in storage order.
fn axis_phases(x: f64, n: usize) -> Vec<Complex64> {
    let mut out = vec![ZERO; n];
    let half = n / 2;
    let step = Complex64::from_polar(1.0, 2.0 * PI * x);
    let mut p = Complex64::new(1.0, 0.0);
    for (k, slot) in out.iter_mut().enumerate().take(half + 1) {
        // Re-anchor the recurrence periodically to bound drift.
        if k % 16 == 0 {
            p = Complex64::from_polar(1.0, 2.0 * PI * x * k as f64);
        }
        *slot = p;
        p *= step;
    }
    for j in half + 1..n {
        out[j] = out[n - j].conj();
    }
    out
}

/// Nonzero frequencies with `|k| ≤ band` from one half of the lattice
/// (`k₁ > 0`, or `k₁ = 0` and `k₂ > 0`), ordered by `|k|²` then
/// lexicographically. Nyquist components are never included.
pub fn half_lattice(grid: TorusGrid, band: usize) -> Vec<Freq> {
    let lim = (grid.nyquist() as i64 - 1).min(band as i64);
    let b2 = (band * band) as i64;
    let mut out = Vec::new();
    match grid.dim() {
        1 => out.extend((1..=lim).map(|k| [k, 0])),
        _ => {
            for k1 in 0..=lim {
                for k2 in -lim..=lim {
                    if (k1 > 0 || k2 > 0) && k1 * k1 + k2 * k2 <= b2 {
                        out.push([k1, k2]);
                    }
                }
            }
        }
    }
    out.sort_by_key(|k| (k[0] * k[0] + k[1] * k[1], k[0], k[1]));
    out
}

/// `|k|` (Euclidean) of a frequency vector.
pub fn freq_norm(k: Freq) -> f64 {
    ((k[0] * k[0] + k[1] * k[1]) as f64).sqrt()
}

pub(crate) fn phases(x: f64, n: usize) -> Vec<Complex64> {
    axis_phases(x, n)
}

pub fn to_fourier(f: &GridFunction) -> FourierCoeffs {
    SpectralPlan::new(f.grid).to_fourier(f)
}

pub fn from_fourier(c: &FourierCoeffs) -> GridFunction {
    SpectralPlan::new(c.grid).from_fourier(c)
}

/// Periodic convolution `∫ f(x-y) g(y) dy`, computed mode by mode.
pub fn convolve(f: &GridFunction, g: &GridFunction) -> Result<GridFunction> {
    f.grid.ensure_same(&g.grid)?;
    let mut plan = SpectralPlan::new(f.grid);
    let mut fh = plan.to_fourier(f);
    let gh = plan.to_fourier(g);
    for (a, b) in fh.coeffs.iter_mut().zip(&gh.coeffs) {
        *a *= b;
    }
    Ok(plan.from_fourier(&fh))
}

/// Spectral gradient, one component per axis.
pub fn gradient(f: &GridFunction) -> Vec<GridFunction> {
    let grid = f.grid;
    let mut plan = SpectralPlan::new(grid);
    let fh = plan.to_fourier(f);
    (0..grid.dim())
        .map(|axis| {
            let sym = grid.derivative_symbols(axis);
            let coeffs = fh.coeffs.iter().zip(&sym).map(|(c, s)| c * s).collect();
            plan.from_fourier(&FourierCoeffs { grid, coeffs })
        })
        .collect()
}

/// `( Σ (1+4π²|k|²)^s |c(k)|² )^{1/2}` over the retained frequencies.
pub fn sobolev_norm_coeffs(c: &FourierCoeffs, s: f64) -> f64 {
    let grid = c.grid;
    c.coeffs
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let w = 1.0 + 4.0 * PI * PI * grid.freq_norm_sq(i);
            w.powf(s) * z.norm_sqr()
        })
        .sum::<f64>()
        .sqrt()
}

pub fn sobolev_norm(f: &GridFunction, s: f64) -> f64 {
    sobolev_norm_coeffs(&to_fourier(f), s)
}

/// Trigonometric interpolation of `f` at an arbitrary point.
pub fn eval_at_point(f: &GridFunction, x: Point) -> f64 {
    to_fourier(f).eval(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn g1(n: usize) -> TorusGrid {
        TorusGrid::new(1, n).unwrap()
    }

    fn g2(n: usize) -> TorusGrid {
        TorusGrid::new(2, n).unwrap()
    }

    /// Random real trigonometric polynomial with frequencies below `band`.
    fn band_limited(grid: TorusGrid, band: i64, amps: &[f64]) -> GridFunction {
        let mut it = amps.iter().cycle();
        let mut terms = Vec::new();
        let k2max = if grid.dim() == 2 { band } else { 0 };
        for k1 in 0..=band {
            for k2 in -k2max..=k2max {
                terms.push((k1 as f64, k2 as f64, *it.next().unwrap(), *it.next().unwrap()));
            }
        }
        GridFunction::from_fn(grid, |x| {
            terms
                .iter()
                .map(|&(k1, k2, a, b)| {
                    let ph = 2.0 * PI * (k1 * x[0] + k2 * x[1]);
                    a * ph.cos() + b * ph.sin()
                })
                .sum()
        })
    }

    #[test]
    fn grid_validation() {
        assert!(TorusGrid::new(3, 8).is_err());
        assert!(TorusGrid::new(1, 2).is_err());
        assert!(TorusGrid::new(1, 12).is_err());
        let g = g1(64);
        assert_eq!(g.spacing() * g.points_per_axis() as f64, 1.0);
        assert_eq!(g2(8).len(), 64);
    }

    #[test]
    fn frequency_layout() {
        let g = g1(8);
        let ks: Vec<i64> = (0..8).map(|i| g.freq(i)[0]).collect();
        assert_eq!(ks, vec![0, 1, 2, 3, 4, -3, -2, -1]);
        assert_eq!(g.index_of([-4, 0]), None);
        assert_eq!(g.index_of([4, 0]), Some(4));
        let g = g2(8);
        for i in 0..g.len() {
            assert_eq!(g.index_of(g.freq(i)), Some(i));
        }
    }

    #[test]
    fn fourier_of_constant_and_trig() {
        let g = g1(16);
        let c = to_fourier(&GridFunction::constant(g, 1.0));
        assert_abs_diff_eq!(c.at([0, 0]).re, 1.0, epsilon = 1e-15);
        assert!(c.iter().skip(1).all(|(_, z)| z.norm() < 1e-15));

        let c = to_fourier(&GridFunction::from_fn(g, |x| (2.0 * PI * x[0]).cos()));
        assert_abs_diff_eq!(c.at([1, 0]).re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c.at([-1, 0]).re, 0.5, epsilon = 1e-15);
        let others = c.iter().filter(|(k, _)| k[0].abs() != 1).map(|(_, z)| z.norm());
        assert!(others.fold(0.0, f64::max) < 1e-15);

        let c = to_fourier(&GridFunction::from_fn(g, |x| (2.0 * PI * x[0]).sin()));
        assert_abs_diff_eq!(c.at([1, 0]).im, -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c.at([-1, 0]).im, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c.at([1, 0]).re, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn convolution_examples() {
        let g = g1(32);
        let f = GridFunction::from_fn(g, |x| (2.0 * PI * x[0]).sin() + x[0].cos());
        let h = convolve(&f, &GridFunction::constant(g, 1.0)).unwrap();
        let m = f.mean();
        assert!(h.values().iter().all(|v| (v - m).abs() < 1e-14));

        let c = GridFunction::from_fn(g, |x| (2.0 * PI * x[0]).cos());
        let h = convolve(&c, &c).unwrap();
        for (i, v) in h.values().iter().enumerate() {
            assert_abs_diff_eq!(*v, 0.5 * (2.0 * PI * g.node(i)[0]).cos(), epsilon = 1e-14);
        }
        let other = g2(8);
        assert!(matches!(convolve(&c, &GridFunction::constant(other, 1.0)), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn gradient_examples() {
        let g = g1(32);
        let d = gradient(&GridFunction::constant(g, 3.0));
        assert!(d[0].sup_norm() < 1e-13);
        let d = gradient(&GridFunction::from_fn(g, |x| (2.0 * PI * x[0]).cos()));
        for (i, v) in d[0].values().iter().enumerate() {
            assert_abs_diff_eq!(*v, -2.0 * PI * (2.0 * PI * g.node(i)[0]).sin(), epsilon = 1e-12);
        }
        let g = g2(16);
        let d = gradient(&GridFunction::from_fn(g, |x| (2.0 * PI * x[0]).sin()));
        for (i, v) in d[0].values().iter().enumerate() {
            assert_abs_diff_eq!(*v, 2.0 * PI * (2.0 * PI * g.node(i)[0]).cos(), epsilon = 1e-12);
        }
        assert!(d[1].sup_norm() < 1e-12);
    }

    #[test]
    fn sobolev_examples() {
        let g = g1(32);
        for s in [-2.0, 0.0, 1.5] {
            assert_eq!(sobolev_norm(&GridFunction::constant(g, 0.0), s), 0.0);
        }
        let c = GridFunction::from_fn(g, |x| (2.0 * PI * x[0]).cos());
        assert_abs_diff_eq!(sobolev_norm(&c, 0.0), 0.5f64.sqrt(), epsilon = 1e-14);
        for s in [-3.0, -1.0, 0.5, 2.0, 4.0] {
            let expected = 0.5f64.sqrt() * (1.0 + 4.0 * PI * PI).powf(s / 2.0);
            assert_abs_diff_eq!(sobolev_norm(&c, s), expected, epsilon = 1e-12 * expected.max(1.0));
        }
    }

    #[test]
    fn point_evaluation() {
        let g = g1(16);
        assert_abs_diff_eq!(eval_at_point(&GridFunction::constant(g, 3.0), [0.3717, 0.0]), 3.0, epsilon = 1e-14);
        let c = GridFunction::from_fn(g, |x| (2.0 * PI * x[0]).cos());
        assert_abs_diff_eq!(eval_at_point(&c, [0.125, 0.0]), 0.5f64.sqrt(), epsilon = 1e-14);

        // Random band-limited functions are reproduced at nodes and off-grid.
        let amps = [0.3, -1.2, 0.7, 0.05, -0.4, 0.9, 0.11, -0.6];
        for grid in [g1(32), g2(16)] {
            let f = band_limited(grid, 3, &amps);
            let coeffs = to_fourier(&f);
            for j in (0..grid.len()).step_by(7) {
                assert_abs_diff_eq!(coeffs.eval(grid.node(j)), f.values()[j], epsilon = 1e-12);
            }
            let x = [0.123, 0.777];
            let direct = band_limited(grid, 3, &amps);
            let _ = direct;
            let exact: f64 = {
                let mut it = amps.iter().cycle();
                let k2max = if grid.dim() == 2 { 3 } else { 0 };
                let mut s = 0.0;
                for k1 in 0..=3i64 {
                    for k2 in -k2max..=k2max {
                        let (a, b) = (*it.next().unwrap(), *it.next().unwrap());
                        let ph = 2.0 * PI * (k1 as f64 * x[0] + if grid.dim() == 2 { k2 as f64 * x[1] } else { 0.0 });
                        s += a * ph.cos() + b * ph.sin();
                    }
                }
                s
            };
            assert_abs_diff_eq!(coeffs.eval(x), exact, epsilon = 1e-12);
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = g2(4);
        let f = GridFunction::from_fn(g, |x| x[0] + 10.0 * x[1]);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,value\n"));
        assert_eq!(GridFunction::read_csv(buf.as_slice()).unwrap(), f);

        let c = to_fourier(&f);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("k1,k2,re,im\n"));
        assert_eq!(FourierCoeffs::read_csv(buf.as_slice(), g).unwrap(), c);
    }

    fn arb_values(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0..10.0f64, n)
    }

    proptest! {
        #[test]
        fn round_trip(vals in arb_values(64)) {
            let f = GridFunction::new(g1(64), vals).unwrap();
            let back = from_fourier(&to_fourier(&f));
            let err = back.sub(&f).unwrap().sup_norm();
            prop_assert!(err <= 1e-12 * (1.0 + f.sup_norm()));
        }

        #[test]
        fn round_trip_2d(vals in arb_values(256)) {
            let f = GridFunction::new(g2(16), vals).unwrap();
            let back = from_fourier(&to_fourier(&f));
            prop_assert!(back.sub(&f).unwrap().sup_norm() <= 1e-12 * (1.0 + f.sup_norm()));
        }

        #[test]
        fn real_input_is_conjugate_symmetric(vals in arb_values(256)) {
            let f = GridFunction::new(g2(16), vals).unwrap();
            let c = to_fourier(&f);
            prop_assert!(c.conjugate_asymmetry() < 1e-14);
            prop_assert!((c.mean() - f.mean()).abs() < 1e-13);
        }

        #[test]
        fn convolution_theorem(a in arb_values(16), b in arb_values(16)) {
            let grid = g1(64);
            let f = band_limited(grid, 7, &a);
            let g = band_limited(grid, 7, &b);
            let h = convolve(&f, &g).unwrap();
            let (fh, gh, hh) = (to_fourier(&f), to_fourier(&g), to_fourier(&h));
            for i in 0..grid.len() {
                let lhs = hh.as_slice()[i];
                let rhs = fh.as_slice()[i] * gh.as_slice()[i];
                prop_assert!((lhs - rhs).norm() < 1e-12);
            }
            prop_assert!((h.mean() - f.mean() * g.mean()).abs() < 1e-12);
            let h2 = convolve(&g, &f).unwrap();
            prop_assert!(h.sub(&h2).unwrap().sup_norm() < 1e-12);
        }

        #[test]
        fn parseval(a in arb_values(32)) {
            let grid = g2(16);
            let f = band_limited(grid, 3, &a);
            let l2sq = f.l2_norm().powi(2);
            let spec: f64 = to_fourier(&f).as_slice().iter().map(|z| z.norm_sqr()).sum();
            prop_assert!((l2sq - spec).abs() < 1e-10);
        }

        #[test]
        fn gradient_is_linear(a in arb_values(32), b in arb_values(32), s in -3.0..3.0f64) {
            let grid = g1(32);
            let f = GridFunction::new(grid, a).unwrap();
            let g = GridFunction::new(grid, b).unwrap();
            let comb = f.scale(s).add(&g).unwrap();
            let lhs = gradient(&comb);
            let (gf, gg) = (gradient(&f), gradient(&g));
            let rhs = gf[0].scale(s).add(&gg[0]).unwrap();
            prop_assert!(lhs[0].sub(&rhs).unwrap().sup_norm() < 1e-9);
            let shifted = f.map(|v| v + s);
            prop_assert!(gradient(&shifted)[0].sub(&gf[0]).unwrap().sup_norm() < 1e-9);
        }
    }
}
