//! Pseudo-spectral IMEX solvers for the McKean–Vlasov equation and for its
//! linearized (frozen-drift) Fokker–Planck sequence.
//!
//! Diffusion is integrated implicitly and diagonally in Fourier space; the
//! transport term `∇·(ρ b)` with `b = ∇W ∗ μ` is evaluated pseudo-spectrally
//! (2/3-rule dealiasing after the product) and treated explicitly.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{InitialCondition, Potential};
use crate::spectral::{sobolev_norm_coeffs, FourierCoeffs, GridFunction, Point, SpectralPlan, TorusGrid};
use crate::util::trapezoid;
use crate::Complex64;

/// Frames whose minimum drops below this are treated as a blown-up solve.
pub const UNDERSHOOT_TOL: f64 = -1e-8;

/// Largest allowed `h · sup|∇W|`.
pub const TRANSPORT_CAP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// IMEX Euler: implicit diffusion, explicit transport. First order.
    Imex1,
    /// IMEX Euler predictor followed by a Crank–Nicolson/Heun corrector. Second order.
    Imex2,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Imex1 => "imex1",
            Scheme::Imex2 => "imex2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub steps: usize,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub scheme: Scheme,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { horizon: 0.25, steps: 256, picard_tol: 1e-8, picard_max_iter: 50, scheme: Scheme::Imex1 }
    }
}

impl SolverConfig {
    pub fn new(horizon: f64, steps: usize, scheme: Scheme) -> Self {
        SolverConfig { horizon, steps, scheme, ..Default::default() }
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon T = {} must be positive", self.horizon)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter("steps must be positive".into()));
        }
        if !(self.picard_tol > 0.0) || self.picard_max_iter == 0 {
            return Err(Error::InvalidParameter("picard_tol and picard_max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Density frames on a uniform time mesh `t_m = m·T/M`, with their spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTrajectory {
    grid: TorusGrid,
    step: f64,
    times: Vec<f64>,
    frames: Vec<GridFunction>,
    spectra: Vec<FourierCoeffs>,
}

impl DensityTrajectory {
    /// Trajectory that stays at `f` on the mesh of `cfg`.
    pub fn constant(f: &GridFunction, cfg: &SolverConfig) -> Self {
        let spec = SpectralPlan::new(f.grid()).to_fourier(f);
        let m = cfg.steps;
        DensityTrajectory {
            grid: f.grid(),
            step: cfg.step(),
            times: (0..=m).map(|i| i as f64 * cfg.step()).collect(),
            frames: vec![f.clone(); m + 1],
            spectra: vec![spec; m + 1],
        }
    }

    pub fn from_frames(frames: Vec<GridFunction>, horizon: f64) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::InvalidParameter("a trajectory needs at least two frames".into()));
        }
        let grid = frames[0].grid();
        for f in &frames {
            grid.ensure_same(&f.grid())?;
        }
        let m = frames.len() - 1;
        let step = horizon / m as f64;
        let mut plan = SpectralPlan::new(grid);
        let spectra = frames.iter().map(|f| plan.to_fourier(f)).collect();
        Ok(DensityTrajectory { grid, step, times: (0..=m).map(|i| i as f64 * step).collect(), frames, spectra })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn frames(&self) -> &[GridFunction] {
        &self.frames
    }

    pub fn spectra(&self) -> &[FourierCoeffs] {
        &self.spectra
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn last(&self) -> &GridFunction {
        self.frames.last().expect("nonempty")
    }

    /// Mesh index nearest to `t` (clamped to the horizon).
    pub fn index_of_time(&self, t: f64) -> usize {
        ((t / self.step).round().max(0.0) as usize).min(self.frames.len() - 1)
    }

    /// Mesh cell containing `t` and the linear weight of its right endpoint.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let m = self.frames.len() - 1;
        let s = (t / self.step).clamp(0.0, m as f64);
        let i = (s.floor() as usize).min(m - 1);
        (i, s - i as f64)
    }

    /// `ρ(t, x)`: linear in time between frames, spectral in space.
    pub fn value_at(&self, t: f64, x: Point) -> f64 {
        let (i, lam) = self.locate(t);
        let a = self.spectra[i].eval(x);
        if lam == 0.0 {
            return a;
        }
        (1.0 - lam) * a + lam * self.spectra[i + 1].eval(x)
    }

    pub fn invariants(&self) -> InvariantReport {
        let mut r =
            InvariantReport { max_mass_error: 0.0, min_value: f64::INFINITY, min_time: 0.0, frames: self.len() };
        for (t, f) in self.times.iter().zip(&self.frames) {
            r.max_mass_error = r.max_mass_error.max((f.mean() - 1.0).abs());
            let m = f.min();
            if m < r.min_value {
                r.min_value = m;
                r.min_time = *t;
            }
        }
        r
    }

    /// CSV `t,x1[,x2],rho`, frames in time order, nodes row-major.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let d = self.grid.dim();
        if d == 1 {
            out.write_record(["t", "x1", "rho"])?;
        } else {
            out.write_record(["t", "x1", "x2", "rho"])?;
        }
        for (t, f) in self.times.iter().zip(&self.frames) {
            for (i, v) in f.values().iter().enumerate() {
                let x = self.grid.node(i);
                let mut row = vec![t.to_string(), x[0].to_string()];
                if d == 2 {
                    row.push(x[1].to_string());
                }
                row.push(v.to_string());
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Conservation and positivity summary of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvariantReport {
    pub max_mass_error: f64,
    pub min_value: f64,
    pub min_time: f64,
    pub frames: usize,
}

impl InvariantReport {
    pub fn holds(&self) -> bool {
        self.max_mass_error <= 1e-8 && self.min_value > 0.0
    }
}

/// Run metadata written next to an exported trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryMeta {
    pub grid: TorusGrid,
    pub scheme: Scheme,
    pub h: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub steps: usize,
    pub potential: String,
    pub initial: String,
    pub invariants: InvariantReport,
}

impl TrajectoryMeta {
    pub fn new(rho: &DensityTrajectory, cfg: &SolverConfig, w: &Potential, phi: &InitialCondition) -> Self {
        TrajectoryMeta {
            grid: rho.grid(),
            scheme: cfg.scheme,
            h: cfg.step(),
            horizon: cfg.horizon,
            steps: cfg.steps,
            potential: w.id().to_string(),
            initial: phi.id().to_string(),
            invariants: rho.invariants(),
        }
    }
}

enum Drift<'a> {
    Frozen(&'a DensityTrajectory),
    SelfConsistent,
}

/// Per-solve transform workspace.
struct Stepper {
    grid: TorusGrid,
    plan: SpectralPlan,
    active: bool,
    /// `2πi k_a Ŵ(k)` per axis.
    grad_w: Vec<Vec<Complex64>>,
    /// `2πi k_a`, zeroed where the dealiasing mask drops the mode.
    div: Vec<Vec<Complex64>>,
    lap: Vec<f64>,
    buf: Vec<Complex64>,
    drift: Vec<Vec<f64>>,
}

impl Stepper {
    fn new(w: &Potential) -> Self {
        let grid = w.grid();
        let mask = grid.dealias_mask();
        let grad_w = (0..grid.dim())
            .map(|a| grid.derivative_symbols(a).iter().zip(w.fourier().as_slice()).map(|(s, c)| s * c).collect())
            .collect();
        let div = (0..grid.dim())
            .map(|a| {
                grid.derivative_symbols(a)
                    .into_iter()
                    .zip(&mask)
                    .map(|(s, &keep)| if keep { s } else { Complex64::new(0.0, 0.0) })
                    .collect()
            })
            .collect();
        Stepper {
            grid,
            plan: SpectralPlan::new(grid),
            active: !w.is_zero(),
            grad_w,
            div,
            lap: (0..grid.len()).map(|i| 4.0 * PI * PI * grid.freq_norm_sq(i)).collect(),
            buf: Vec::with_capacity(grid.len()),
            drift: vec![vec![0.0; grid.len()]; grid.dim()],
        }
    }

    fn set_drift(&mut self, mu_hat: &[Complex64]) {
        for a in 0..self.grid.dim() {
            self.buf.clear();
            self.buf.extend(self.grad_w[a].iter().zip(mu_hat).map(|(g, m)| g * m));
            self.plan.inverse(&mut self.buf);
            for (d, z) in self.drift[a].iter_mut().zip(&self.buf) {
                *d = z.re;
            }
        }
    }

    /// `out = FFT[∇·(ρ b)]` for the current drift.
    fn transport(&mut self, rho: &[f64], out: &mut [Complex64]) {
        out.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for a in 0..self.grid.dim() {
            self.buf.clear();
            self.buf.extend(rho.iter().zip(&self.drift[a]).map(|(r, b)| Complex64::new(r * b, 0.0)));
            self.plan.forward(&mut self.buf);
            for ((o, f), s) in out.iter_mut().zip(&self.buf).zip(&self.div[a]) {
                *o += s * f;
            }
        }
    }

    fn values(&mut self, hat: &[Complex64], out: &mut Vec<f64>) {
        out.resize(hat.len(), 0.0);
        self.plan.inverse_real(hat, &mut self.buf, out);
    }
}

fn check_inputs(w: &Potential, phi: &InitialCondition, cfg: &SolverConfig) -> Result<()> {
    cfg.validate()?;
    w.grid().ensure_same(&phi.grid())?;
    let g = w.grad_sup();
    if cfg.step() * g > TRANSPORT_CAP {
        return Err(Error::StepTooLarge { h: cfg.step(), cap: TRANSPORT_CAP / g });
    }
    Ok(())
}

fn march(w: &Potential, phi: &InitialCondition, cfg: &SolverConfig, drift: Drift<'_>) -> Result<DensityTrajectory> {
    check_inputs(w, phi, cfg)?;
    let grid = w.grid();
    if let Drift::Frozen(src) = &drift {
        grid.ensure_same(&src.grid())?;
        if src.len() != cfg.steps + 1 || (src.step() - cfg.step()).abs() > 1e-12 * cfg.step() {
            return Err(Error::InvalidParameter("drift source is not on the solver time mesh".into()));
        }
    }
    let h = cfg.step();
    let n = grid.len();
    let mut st = Stepper::new(w);
    let euler: Vec<f64> = st.lap.iter().map(|l| 1.0 / (1.0 + h * l)).collect();
    let cn_num: Vec<f64> = st.lap.iter().map(|l| 1.0 - 0.5 * h * l).collect();
    let cn_den: Vec<f64> = st.lap.iter().map(|l| 1.0 / (1.0 + 0.5 * h * l)).collect();

    let mut rho_hat = phi.fourier().as_slice().to_vec();
    let mut vals = phi.repr().values().to_vec();
    let mut n0 = vec![Complex64::new(0.0, 0.0); n];
    let mut n1 = n0.clone();
    let mut star = n0.clone();
    let mut star_vals = Vec::with_capacity(n);

    let mut times = Vec::with_capacity(cfg.steps + 1);
    let mut frames = Vec::with_capacity(cfg.steps + 1);
    let mut spectra = Vec::with_capacity(cfg.steps + 1);
    times.push(0.0);
    frames.push(phi.repr().clone());
    spectra.push(phi.fourier().clone());

    for m in 0..cfg.steps {
        if st.active {
            match &drift {
                Drift::Frozen(src) => st.set_drift(src.spectra()[m].as_slice()),
                Drift::SelfConsistent => st.set_drift(&rho_hat),
            }
            st.transport(&vals, &mut n0);
        }
        for i in 0..n {
            star[i] = (rho_hat[i] + h * n0[i]) * euler[i];
        }
        if cfg.scheme == Scheme::Imex2 {
            if st.active {
                st.values(&star, &mut star_vals);
                match &drift {
                    Drift::Frozen(src) => st.set_drift(src.spectra()[m + 1].as_slice()),
                    Drift::SelfConsistent => st.set_drift(&star),
                }
                st.transport(&star_vals, &mut n1);
            }
            for i in 0..n {
                star[i] = (rho_hat[i] * cn_num[i] + 0.5 * h * (n0[i] + n1[i])) * cn_den[i];
            }
        }
        std::mem::swap(&mut rho_hat, &mut star);
        st.values(&rho_hat, &mut vals);
        let t = (m + 1) as f64 * h;
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        if min < UNDERSHOOT_TOL || !min.is_finite() || vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Instability { time: t, min });
        }
        times.push(t);
        frames.push(GridFunction::from_raw(grid, vals.clone()));
        spectra.push(FourierCoeffs::new(grid, rho_hat.clone())?);
    }
    Ok(DensityTrajectory { grid, step: h, times, frames, spectra })
}

/// Linear Fokker–Planck equation with the drift `∇W ∗ μ(t)` frozen from
/// `drift_source`.
pub fn solve_linear_fp(
    w: &Potential,
    drift_source: &DensityTrajectory,
    phi: &InitialCondition,
    cfg: &SolverConfig,
) -> Result<DensityTrajectory> {
    march(w, phi, cfg, Drift::Frozen(drift_source))
}

/// The nonlinear equation, drift taken from the current frame.
pub fn solve_mckean_vlasov(w: &Potential, phi: &InitialCondition, cfg: &SolverConfig) -> Result<DensityTrajectory> {
    march(w, phi, cfg, Drift::SelfConsistent)
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub trajectory: DensityTrajectory,
    /// Iterations until the fixed point was reached; the final, confirming
    /// solve is not counted.
    pub iterations: usize,
    /// `sup_t ‖ρ_n(t) − ρ_{n−1}(t)‖_{L²}` for every solve.
    pub residuals: Vec<f64>,
    /// Whether the residuals decrease strictly after the first one.
    pub monotone: bool,
}

/// Picard iteration of the linearized sequence started from the
/// time-constant trajectory `rho0_init`.
pub fn solve_picard(
    w: &Potential,
    phi: &InitialCondition,
    rho0_init: &GridFunction,
    cfg: &SolverConfig,
) -> Result<PicardOutcome> {
    cfg.validate()?;
    if rho0_init.min() <= 0.0 || (rho0_init.mean() - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidParameter("Picard initialization must be a positive unit-mass density".into()));
    }
    let mut prev = DensityTrajectory::constant(rho0_init, cfg);
    let mut residuals = Vec::new();
    for _ in 0..cfg.picard_max_iter {
        let next = solve_linear_fp(w, &prev, phi, cfg)?;
        let r = sup_time_l2_distance(&next, &prev)?;
        residuals.push(r);
        prev = next;
        if r < cfg.picard_tol {
            let monotone = residuals.windows(2).skip(1).all(|p| p[1] < p[0]);
            if !monotone {
                log::warn!("Picard residuals are not monotone: {residuals:?}");
            }
            return Ok(PicardOutcome { trajectory: prev, iterations: residuals.len() - 1, residuals, monotone });
        }
    }
    Err(Error::PicardNonConvergence { residuals })
}

/// Default Picard initialization: φ after heat flow for time 0.01.
pub fn default_picard_init(phi: &InitialCondition) -> GridFunction {
    phi.heat_smoothed(0.01)
}

pub(crate) fn check_same_mesh(a: &DensityTrajectory, b: &DensityTrajectory) -> Result<()> {
    a.grid.ensure_same(&b.grid)?;
    if a.len() != b.len() || (a.step - b.step).abs() > 1e-12 * a.step {
        return Err(Error::InvalidParameter("trajectories live on different time meshes".into()));
    }
    Ok(())
}

/// Per-frame `‖a(t_m) − b(t_m)‖_{H^s}`.
pub fn frame_distances(a: &DensityTrajectory, b: &DensityTrajectory, s: f64) -> Result<Vec<f64>> {
    check_same_mesh(a, b)?;
    Ok(a.spectra
        .iter()
        .zip(&b.spectra)
        .map(|(x, y)| {
            let diff: Vec<Complex64> = x.as_slice().iter().zip(y.as_slice()).map(|(p, q)| p - q).collect();
            sobolev_norm_coeffs(&FourierCoeffs::new(a.grid, diff).expect("same grid"), s)
        })
        .collect())
}

/// `sup_t ‖a(t) − b(t)‖_{L²}` over the mesh.
pub fn sup_time_l2_distance(a: &DensityTrajectory, b: &DensityTrajectory) -> Result<f64> {
    check_same_mesh(a, b)?;
    Ok(a.frames
        .iter()
        .zip(&b.frames)
        .map(|(x, y)| x.sub(y).map(|d| d.l2_norm()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max))
}

/// `‖a − b‖_{L²([0,T]×𝕋^d, λ)}` with λ the uniform probability measure on the
/// cylinder (time trapezoid, divided by T).
pub fn space_time_l2_distance(a: &DensityTrajectory, b: &DensityTrajectory) -> Result<f64> {
    let d = frame_distances(a, b, 0.0)?;
    let sq: Vec<f64> = d.iter().map(|v| v * v).collect();
    Ok((trapezoid(&sq, a.step) / a.horizon()).sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityEntry {
    pub s: u32,
    /// `sup_t ‖ρ(t)‖_{H^s}`.
    pub sup_time: f64,
    /// `(∫_0^T ‖ρ(t)‖²_{H^{s+1}} dt)^{1/2}`.
    pub l2_time_next: f64,
    /// `(∫_0^T ‖∂_tρ(t)‖²_{H^{s−1}} dt)^{1/2}`, time derivative by finite differences.
    pub l2_time_derivative: f64,
}

/// Sobolev regularity of a trajectory for `s = 0, …, s_max`.
pub fn trajectory_regularity_report(rho: &DensityTrajectory, s_max: u32) -> Vec<RegularityEntry> {
    let dt = time_derivative(rho);
    (0..=s_max)
        .map(|s| {
            let s_f = s as f64;
            let sup_time = rho.spectra.iter().map(|c| sobolev_norm_coeffs(c, s_f)).fold(0.0, f64::max);
            let next: Vec<f64> = rho.spectra.iter().map(|c| sobolev_norm_coeffs(c, s_f + 1.0).powi(2)).collect();
            let der: Vec<f64> = dt.iter().map(|c| sobolev_norm_coeffs(c, s_f - 1.0).powi(2)).collect();
            RegularityEntry {
                s,
                sup_time,
                l2_time_next: trapezoid(&next, rho.step).sqrt(),
                l2_time_derivative: trapezoid(&der, rho.step).sqrt(),
            }
        })
        .collect()
}

/// Finite-difference `∂_t` of the spectra: central in the interior,
/// one-sided at the ends.
pub fn time_derivative(rho: &DensityTrajectory) -> Vec<FourierCoeffs> {
    spectral_time_derivative(&rho.spectra, rho.step)
}

pub(crate) fn spectral_time_derivative(spectra: &[FourierCoeffs], h: f64) -> Vec<FourierCoeffs> {
    let m = spectra.len() - 1;
    (0..=m)
        .map(|i| {
            let (lo, hi, span) = match i {
                0 => (0, 1, h),
                _ if i == m => (m - 1, m, h),
                _ => (i - 1, i + 1, 2.0 * h),
            };
            let coeffs =
                spectra[hi].as_slice().iter().zip(spectra[lo].as_slice()).map(|(a, b)| (a - b) / span).collect();
            FourierCoeffs::new(spectra[0].grid(), coeffs).expect("same grid")
        })
        .collect()
}
