//! Synthetic regression data `Y_i = ρ_W(t_i, X_i) + σ ε_i` and its Gaussian
//! log-likelihood.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{InitialCondition, Potential};
use crate::particles::HistogramData;
use crate::pde::{solve_mckean_vlasov, DensityTrajectory, SolverConfig};
use crate::spectral::{phases, Point, TorusGrid};
use crate::util::{rng, wrap_unit};
use crate::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t: f64,
    pub x: Point,
    pub y: f64,
}

/// Sidecar metadata of an observation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationMeta {
    pub sigma: f64,
    pub seed: u64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dim: usize,
    pub grid: Option<TorusGrid>,
    pub potential: String,
    pub initial: String,
    /// Space-time norms use the uniform probability measure on `[0,T]×𝕋^d`.
    pub measure: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub records: Vec<Observation>,
    pub meta: ObservationMeta,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn sigma(&self) -> f64 {
        self.meta.sigma
    }

    /// An empty data set (zero log-likelihood).
    pub fn empty(dim: usize, horizon: f64) -> Self {
        ObservationSet {
            records: Vec::new(),
            meta: ObservationMeta {
                sigma: 1.0,
                seed: 0,
                horizon,
                dim,
                grid: None,
                potential: String::new(),
                initial: String::new(),
                measure: "uniform probability on [0,T]x(0,1]^d".into(),
            },
        }
    }

    /// The first `n` records.
    pub fn prefix(&self, n: usize) -> ObservationSet {
        ObservationSet { records: self.records[..n.min(self.records.len())].to_vec(), meta: self.meta.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            let x_ok = (0..self.meta.dim).all(|a| r.x[a] > 0.0 && r.x[a] <= 1.0);
            if !(r.t >= 0.0 && r.t <= self.meta.horizon) || !x_ok || !r.y.is_finite() {
                return Err(Error::InvalidParameter(format!("observation {i} is out of range: {r:?}")));
            }
        }
        Ok(())
    }

    /// CSV `t,x1[,x2],y`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        if self.meta.dim == 1 {
            out.write_record(["t", "x1", "y"])?;
        } else {
            out.write_record(["t", "x1", "x2", "y"])?;
        }
        for r in &self.records {
            let mut row = vec![r.t.to_string(), r.x[0].to_string()];
            if self.meta.dim == 2 {
                row.push(r.x[1].to_string());
            }
            row.push(r.y.to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_sidecar<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.meta)?;
        Ok(())
    }

    pub fn read(csv_in: impl Read, sidecar: impl Read) -> Result<ObservationSet> {
        let meta: ObservationMeta = serde_json::from_reader(sidecar)?;
        let mut rdr = csv::Reader::from_reader(csv_in);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let expected: &[&str] = if meta.dim == 1 { &["t", "x1", "y"] } else { &["t", "x1", "x2", "y"] };
        if header != expected {
            return Err(Error::Parse(format!("unexpected observation header {header:?}")));
        }
        let mut records = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let v: Vec<f64> = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}"))))
                .collect::<Result<_>>()?;
            let x = if meta.dim == 1 { [v[1], 0.0] } else { [v[1], v[2]] };
            records.push(Observation { t: v[0], x, y: v[meta.dim + 1] });
        }
        let set = ObservationSet { records, meta };
        set.validate()?;
        Ok(set)
    }
}

/// Draws `(t_i, X_i)` uniformly on `[0,T]×𝕋^d` and sets
/// `Y_i = ρ(t_i, X_i) + σ ε_i`. Records are drawn sequentially from one
/// stream, so a smaller `N` with the same seed yields a prefix.
pub fn generate_observations(rho: &DensityTrajectory, n: usize, sigma: f64, seed: u64) -> Result<ObservationSet> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one observation".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma = {sigma} must be nonnegative")));
    }
    let dim = rho.grid().dim();
    let horizon = rho.horizon();
    let mut r = rng(seed, 0);
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let t = horizon * r.random::<f64>();
        let x1 = wrap_unit(r.random::<f64>());
        let x2 = if dim == 2 { wrap_unit(r.random::<f64>()) } else { 0.0 };
        let eps: f64 = StandardNormal.sample(&mut r);
        records.push(Observation { t, x: [x1, x2], y: 0.0 }.with_noise(eps * sigma));
    }
    let eval = PointEvaluator::new(&records, rho.grid(), rho.step(), rho.len() - 1);
    let clean = eval.values(rho);
    for (rec, v) in records.iter_mut().zip(clean) {
        rec.y += v;
    }
    let mut set = ObservationSet::empty(dim, horizon);
    set.records = records;
    set.meta.sigma = sigma;
    set.meta.seed = seed;
    set.meta.grid = Some(rho.grid());
    Ok(set)
}

/// Regression data from a space-time histogram: one record per bin, at the
/// bin centre, with `y` the estimated density. `sigma` is the pooled binomial
/// standard error of the bin densities (a homoskedastic idealization).
pub fn observations_from_histogram(h: &HistogramData) -> Result<ObservationSet> {
    let s = h.space_bins_per_axis;
    let vol = h.bin_volume();
    let mut records = Vec::with_capacity(h.time_bins * h.space_cells());
    let mut var = 0.0;
    for tb in 0..h.time_bins {
        let t = (tb as f64 + 0.5) * h.horizon / h.time_bins as f64;
        let m = (h.snapshots_per_bin[tb] * h.particles) as f64;
        for cell in 0..h.space_cells() {
            let (i, j) = if h.dim == 1 { (cell, 0) } else { (cell / s, cell % s) };
            let x1 = (i as f64 + 0.5) / s as f64;
            let x2 = if h.dim == 2 { (j as f64 + 0.5) / s as f64 } else { 0.0 };
            let y = h.density(tb, cell);
            let p = (y * vol).min(1.0);
            var += p * (1.0 - p) / (m * vol * vol);
            records.push(Observation { t, x: [x1, x2], y });
        }
    }
    if records.is_empty() {
        return Err(Error::Empty("histogram has no bins".into()));
    }
    let mut set = ObservationSet::empty(h.dim, h.horizon);
    set.meta.sigma = (var / records.len() as f64).sqrt();
    set.records = records;
    Ok(set)
}

impl Observation {
    fn with_noise(mut self, e: f64) -> Self {
        self.y = e;
        self
    }
}

/// Precomputed time weights and spatial phases for evaluating trajectories at
/// a fixed set of design points.
struct PointEvaluator {
    grid: TorusGrid,
    cells: Vec<(usize, f64)>,
    p1: Vec<Vec<Complex64>>,
    p2: Vec<Vec<Complex64>>,
}

impl PointEvaluator {
    fn new(records: &[Observation], grid: TorusGrid, step: f64, steps: usize) -> Self {
        let n = grid.points_per_axis();
        let cells = records
            .iter()
            .map(|r| {
                let s = (r.t / step).clamp(0.0, steps as f64);
                let i = (s.floor() as usize).min(steps - 1);
                (i, s - i as f64)
            })
            .collect();
        let p1 = records.iter().map(|r| phases(r.x[0], n)).collect();
        let p2 = if grid.dim() == 2 { records.iter().map(|r| phases(r.x[1], n)).collect() } else { Vec::new() };
        PointEvaluator { grid, cells, p1, p2 }
    }

    fn eval_one(&self, c: &[Complex64], i: usize) -> f64 {
        let p1 = &self.p1[i];
        if self.grid.dim() == 1 {
            return c.iter().zip(p1).map(|(a, p)| a.re * p.re - a.im * p.im).sum();
        }
        let n = self.grid.points_per_axis();
        let p2 = &self.p2[i];
        let mut acc = 0.0;
        for (r, pr) in p1.iter().enumerate() {
            let mut row = Complex64::new(0.0, 0.0);
            for (a, p) in c[r * n..(r + 1) * n].iter().zip(p2) {
                row += a * p;
            }
            acc += (row * pr).re;
        }
        acc
    }

    fn values(&self, rho: &DensityTrajectory) -> Vec<f64> {
        let spectra = rho.spectra();
        self.cells
            .iter()
            .enumerate()
            .map(|(i, &(m, lam))| {
                let a = self.eval_one(spectra[m].as_slice(), i);
                if lam == 0.0 {
                    a
                } else {
                    (1.0 - lam) * a + lam * self.eval_one(spectra[m + 1].as_slice(), i)
                }
            })
            .collect()
    }
}

/// Log-likelihood `−(1/(2σ²)) Σ (Y_i − ρ_W(t_i, X_i))²` for fixed data; a
/// noiseless data set (σ = 0) is scored with σ = 1.
pub struct LikelihoodEvaluator {
    data: ObservationSet,
    phi: InitialCondition,
    cfg: SolverConfig,
    eval: Option<PointEvaluator>,
}

/// A log-likelihood value with the trajectory it was computed from (absent
/// for empty data, where no solve is needed).
#[derive(Debug, Clone)]
pub struct Likelihood {
    pub loglik: f64,
    pub trajectory: Option<DensityTrajectory>,
}

impl LikelihoodEvaluator {
    pub fn new(data: ObservationSet, phi: InitialCondition, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        data.validate()?;
        if !data.is_empty() && (data.meta.horizon - cfg.horizon).abs() > 1e-12 * cfg.horizon {
            return Err(Error::InvalidParameter(format!(
                "data horizon {} differs from solver horizon {}",
                data.meta.horizon, cfg.horizon
            )));
        }
        if data.meta.dim != phi.grid().dim() {
            return Err(Error::InvalidParameter("data and grid dimensions differ".into()));
        }
        let eval = (!data.is_empty()).then(|| PointEvaluator::new(&data.records, phi.grid(), cfg.step(), cfg.steps));
        Ok(LikelihoodEvaluator { data, phi, cfg, eval })
    }

    pub fn data(&self) -> &ObservationSet {
        &self.data
    }

    pub fn phi(&self) -> &InitialCondition {
        &self.phi
    }

    pub fn solver(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn is_trivial(&self) -> bool {
        self.data.is_empty()
    }

    fn sigma_eff(&self) -> f64 {
        if self.data.meta.sigma > 0.0 {
            self.data.meta.sigma
        } else {
            1.0
        }
    }

    /// Log-likelihood of a given trajectory.
    pub fn score(&self, rho: &DensityTrajectory) -> f64 {
        let Some(eval) = &self.eval else { return 0.0 };
        let s2 = self.sigma_eff().powi(2);
        let pred = eval.values(rho);
        let ss: f64 = self.data.records.iter().zip(pred).map(|(r, p)| (r.y - p).powi(2)).sum();
        -0.5 * ss / s2
    }

    /// Solves the PDE for `w` (unless the data are empty) and scores it.
    pub fn evaluate(&self, w: &Potential) -> Result<Likelihood> {
        if self.eval.is_none() {
            return Ok(Likelihood { loglik: 0.0, trajectory: None });
        }
        let rho = solve_mckean_vlasov(w, &self.phi, &self.cfg)?;
        Ok(Likelihood { loglik: self.score(&rho), trajectory: Some(rho) })
    }
}

pub fn log_likelihood(w: &Potential, data: &ObservationSet, phi: &InitialCondition, cfg: &SolverConfig) -> Result<f64> {
    Ok(LikelihoodEvaluator::new(data.clone(), phi.clone(), *cfg)?.evaluate(w)?.loglik)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{kuramoto, periodized_laplace};
    use crate::pde::Scheme;
    use crate::spectral::GridFunction;

    fn setup(d: usize, n: usize) -> (Potential, InitialCondition, SolverConfig, DensityTrajectory) {
        let grid = TorusGrid::new(d, n).unwrap();
        let w = kuramoto(grid, 1.0).unwrap();
        let phi = periodized_laplace(2, grid).unwrap();
        let cfg = SolverConfig::new(0.25, 64, Scheme::Imex1);
        let rho = solve_mckean_vlasov(&w, &phi, &cfg).unwrap();
        (w, phi, cfg, rho)
    }

    #[test]
    fn noiseless_data_score_zero() {
        for (d, n) in [(1, 64), (2, 16)] {
            let (w, phi, cfg, rho) = setup(d, n);
            let data = generate_observations(&rho, 500, 0.0, 3).unwrap();
            for r in &data.records {
                assert!((r.y - rho.value_at(r.t, r.x)).abs() < 1e-12);
            }
            let ll = log_likelihood(&w, &data, &phi, &cfg).unwrap();
            assert!(ll.abs() <= 1e-6 * 500.0, "{ll}");
        }
    }

    #[test]
    fn constant_density_noise_moments() {
        let grid = TorusGrid::new(1, 16).unwrap();
        let cfg = SolverConfig::new(0.25, 8, Scheme::Imex1);
        let rho = DensityTrajectory::constant(&GridFunction::constant(grid, 1.0), &cfg);
        let n = 100_000;
        let data = generate_observations(&rho, n, 1.0, 7).unwrap();
        let mean = data.records.iter().map(|r| r.y).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 4.0 / (n as f64).sqrt());
        let (_, _, _, rho) = setup(1, 64);
        let data = generate_observations(&rho, n, 0.2, 8).unwrap();
        let var = data.records.iter().map(|r| (r.y - rho.value_at(r.t, r.x)).powi(2)).sum::<f64>() / n as f64;
        assert!((var / 0.04 - 1.0).abs() < 0.05);
    }

    #[test]
    fn likelihood_arithmetic() {
        let (w, phi, cfg, rho) = setup(1, 32);
        let empty = ObservationSet::empty(1, 0.25);
        assert_eq!(log_likelihood(&w, &empty, &phi, &cfg).unwrap(), 0.0);
        let mut one = ObservationSet::empty(1, 0.25);
        let (t, x) = (0.1, [0.3, 0.0]);
        one.records.push(Observation { t, x, y: rho.value_at(t, x) + 1.0 });
        assert!((log_likelihood(&w, &one, &phi, &cfg).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariance_and_prefix() {
        let (w, phi, cfg, rho) = setup(1, 32);
        let data = generate_observations(&rho, 200, 0.1, 5).unwrap();
        let mut rev = data.clone();
        rev.records.reverse();
        let a = log_likelihood(&w, &data, &phi, &cfg).unwrap();
        let b = log_likelihood(&w, &rev, &phi, &cfg).unwrap();
        assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
        let small = generate_observations(&rho, 50, 0.1, 5).unwrap();
        assert_eq!(small.records, data.records[..50]);
    }

    #[test]
    fn csv_round_trip() {
        let (_, _, _, rho) = setup(2, 8);
        let data = generate_observations(&rho, 20, 0.1, 1).unwrap();
        let (mut c, mut s) = (Vec::new(), Vec::new());
        data.write_csv(&mut c).unwrap();
        data.write_sidecar(&mut s).unwrap();
        assert!(String::from_utf8(c.clone()).unwrap().starts_with("t,x1,x2,y\n"));
        assert_eq!(ObservationSet::read(c.as_slice(), s.as_slice()).unwrap(), data);
    }
}
