//! Config-driven experiment runners.
//!
//! A run reads one [`ExperimentConfig`], writes its tables into
//! `output_dir` and finishes with a `manifest.json` (config hash, seeds,
//! version, invariant summary, output files). Experiment tables carry the
//! provenance columns `seed,grid,scheme`; CSV bodies are deterministic, so
//! reruns of an identical config are byte-identical (only the manifest's
//! `wall_time_s` differs).

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::diagnostics::{
    append_jsonl, check_entropy_stability, check_forward_lipschitz, min_mode, mode_persistence,
    short_time_recovery_bound, short_time_t0, smallness_horizon, stability_constant_coeffs, time_lipschitz_constant,
    InequalityReport, PersistenceReport,
};
use crate::error::{Error, Result};
use crate::inference::{posterior_mean, run_chain, ChainConfig, ChainResult};
use crate::models::{initial_from_id, potential_from_id, verify_decon, InitialCondition, Potential};
use crate::observation::{generate_observations, observations_from_histogram, LikelihoodEvaluator, ObservationSet};
use crate::particles::{
    bin_histogram, cell_averages, simulate, time_bin, write_snapshots_csv, HistogramData, SimulationConfig, Snapshot,
};
use crate::pde::{
    solve_mckean_vlasov, space_time_l2_distance, trajectory_regularity_report, DensityTrajectory, SolverConfig,
    TrajectoryMeta,
};
use crate::priors::{default_band_limit, delta_n, theta_rate, PriorModel, PriorSpec};
use crate::spectral::TorusGrid;
use crate::util::{log_log_slope, median};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    Solve,
    Simulate,
    Generate,
    Infer,
    ForwardRate,
    InverseRate,
    ChaosTrend,
    StabilityProfile,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Solve,
        ExperimentKind::Simulate,
        ExperimentKind::Generate,
        ExperimentKind::Infer,
        ExperimentKind::ForwardRate,
        ExperimentKind::InverseRate,
        ExperimentKind::ChaosTrend,
        ExperimentKind::StabilityProfile,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Solve => "solve",
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Generate => "generate",
            ExperimentKind::Infer => "infer",
            ExperimentKind::ForwardRate => "forward_rate",
            ExperimentKind::InverseRate => "inverse_rate",
            ExperimentKind::ChaosTrend => "chaos_trend",
            ExperimentKind::StabilityProfile => "stability_profile",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// `Y = ρ(t, X) + σε` at uniform design points.
    #[default]
    Pde,
    /// Bin densities of a particle simulation.
    Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub sigma: f64,
    pub source: DataSource,
    /// Existing data CSV (sidecar next to it with extension `.json`); used by `infer`.
    pub data: Option<PathBuf>,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        ObservationConfig { n: 2000, sigma: 1.0, source: DataSource::Pde, data: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistogramConfig {
    pub time_bins: usize,
    pub space_bins: usize,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        HistogramConfig { time_bins: 8, space_bins: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateConfig {
    #[serde(rename = "N_grid")]
    pub n_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Decay exponent for θ and the deconvolvability check when the initial
    /// condition does not carry its own.
    pub zeta: Option<f64>,
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig { n_grid: vec![500, 1000, 2000, 4000], seeds: vec![1, 2, 3], zeta: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChaosConfig {
    pub n_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub time_bins: usize,
    pub space_bins: usize,
}

impl Default for ChaosConfig {
    fn default() -> Self {
        ChaosConfig { n_grid: vec![100, 1000, 10000], seeds: vec![1, 2, 3, 4, 5], time_bins: 4, space_bins: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    #[serde(rename = "K")]
    pub bands: Vec<usize>,
    /// Times to tabulate (snapped to the mesh); empty means every frame.
    pub times: Vec<f64>,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig { bands: vec![1, 2, 3, 4], times: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseConfig {
    /// Second potential the configured one is compared against.
    pub compare: String,
    pub beta: u32,
    #[serde(rename = "K")]
    pub band: usize,
    pub alpha: f64,
    /// JSON-lines log inside `output_dir`.
    pub log: String,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        DiagnoseConfig {
            compare: "kuramoto:scale=0.5".into(),
            beta: 4,
            band: 2,
            alpha: 2.5,
            log: "diagnostics.jsonl".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub grid: TorusGrid,
    pub potential: String,
    pub initial: String,
    pub solver: SolverConfig,
    pub particles: SimulationConfig,
    pub histogram: HistogramConfig,
    pub observation: ObservationConfig,
    pub prior: PriorSpec,
    pub chain: ChainConfig,
    pub rate: RateConfig,
    pub chaos: ChaosConfig,
    pub stability: StabilityConfig,
    pub diagnose: DiagnoseConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::Solve,
            seed: 1,
            output_dir: PathBuf::from("out"),
            grid: TorusGrid::new(1, 128).expect("valid grid"),
            potential: "kuramoto".into(),
            initial: "laplace:m=2".into(),
            solver: SolverConfig::default(),
            particles: SimulationConfig::default(),
            histogram: HistogramConfig::default(),
            observation: ObservationConfig::default(),
            prior: PriorSpec::default(),
            chain: ChainConfig::default(),
            rate: RateConfig::default(),
            chaos: ChaosConfig::default(),
            stability: StabilityConfig::default(),
            diagnose: DiagnoseConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Sets the global seed and the chain seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.chain.seed = seed;
        self
    }

    /// SHA-256 of the canonical JSON form, with `output_dir` blanked so the
    /// hash identifies the computation rather than its destination.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn potential(&self) -> Result<Potential> {
        potential_from_id(&self.potential, self.grid)
    }

    pub fn initial(&self) -> Result<InitialCondition> {
        initial_from_id(&self.initial, self.grid)
    }

    /// Fail-fast checks: ids resolve, module configs are valid, lists used
    /// by the chosen experiment are nonempty, `output_dir` is writable.
    pub fn validate(&self) -> Result<()> {
        self.potential()?;
        self.initial()?;
        self.solver.validate()?;
        if matches!(self.experiment, ExperimentKind::Infer | ExperimentKind::ForwardRate | ExperimentKind::InverseRate)
        {
            self.chain.validate()?;
        }
        if self.experiment == ExperimentKind::Infer || self.experiment == ExperimentKind::ForwardRate {
            let mut spec = self.prior;
            spec.n_for_rescale = self.observation.n.max(2);
            PriorModel::new(spec, self.grid)?;
        }
        let histogram = self.experiment == ExperimentKind::Simulate
            || (matches!(self.experiment, ExperimentKind::Generate | ExperimentKind::Infer)
                && self.observation.source == DataSource::Histogram
                && self.observation.data.is_none());
        if histogram {
            check_time_bins(&self.particles, self.histogram.time_bins, "histogram.time_bins")?;
        }
        if self.experiment == ExperimentKind::ChaosTrend {
            check_time_bins(&self.particles, self.chaos.time_bins, "chaos.time_bins")?;
        }
        let nonempty = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must not be empty")))
            }
        };
        match self.experiment {
            ExperimentKind::ForwardRate | ExperimentKind::InverseRate => {
                nonempty(!self.rate.n_grid.is_empty(), "rate.N_grid")?;
                nonempty(!self.rate.seeds.is_empty(), "rate.seeds")?;
            }
            ExperimentKind::ChaosTrend => {
                nonempty(!self.chaos.n_grid.is_empty(), "chaos.n_grid")?;
                nonempty(!self.chaos.seeds.is_empty(), "chaos.seeds")?;
            }
            ExperimentKind::StabilityProfile => nonempty(!self.stability.bands.is_empty(), "stability.K")?,
            _ => {}
        }
        fs::create_dir_all(&self.output_dir)
            .map_err(|e| Error::Config(format!("output_dir {}: {e}", self.output_dir.display())))?;
        let probe = self.output_dir.join(".write_probe");
        File::create(&probe)
            .and_then(|_| fs::remove_file(&probe))
            .map_err(|e| Error::Config(format!("output_dir {} is not writable: {e}", self.output_dir.display())))?;
        Ok(())
    }
}

/// Evenly spaced snapshots reach every time bin iff their spacing does not
/// exceed the bin width.
fn check_time_bins(p: &SimulationConfig, bins: usize, what: &str) -> Result<()> {
    if p.snapshot_every == 0 || bins == 0 {
        return Err(Error::Config(format!("particles.snapshot_every and {what} must be positive")));
    }
    let intervals = p.steps / p.snapshot_every;
    if intervals < bins {
        return Err(Error::Config(format!(
            "{what} = {bins} exceeds the {intervals} snapshot intervals (steps / snapshot_every); some bins would be empty"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct InvariantSummary {
    pub checked: usize,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: ExperimentKind,
    pub version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub outputs: Vec<String>,
    pub invariants: InvariantSummary,
    pub summary: serde_json::Value,
    pub config: ExperimentConfig,
    pub wall_time_s: f64,
}

/// Output bookkeeping shared by the runners.
struct Run<'a> {
    cfg: &'a ExperimentConfig,
    outputs: Vec<String>,
    invariants: InvariantSummary,
    seeds: Vec<u64>,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Self {
        Run { cfg, outputs: Vec::new(), invariants: InvariantSummary::default(), seeds: vec![cfg.seed] }
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(File::create(self.cfg.output_dir.join(name))?))
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut f = self.create(name)?;
        serde_json::to_writer_pretty(&mut f, value)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut out = csv::Writer::from_writer(self.create(name)?);
        out.write_record(header)?;
        for r in rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        self.invariants.checked += 1;
        if !ok {
            self.invariants.violations.push(what.into());
        }
    }

    fn check_trajectory(&mut self, label: &str, rho: &DensityTrajectory) {
        let r = rho.invariants();
        self.check(
            r.holds(),
            format!("{label}: mass error {:e}, minimum {:e} at t = {}", r.max_mass_error, r.min_value, r.min_time),
        );
    }

    /// Provenance columns `seed,grid,scheme`.
    fn provenance(&self, seed: impl ToString) -> [String; 3] {
        [seed.to_string(), self.cfg.grid.to_string(), self.cfg.solver.scheme.to_string()]
    }

    fn finish(self, summary: serde_json::Value, start: Instant) -> Result<Manifest> {
        let cfg = self.cfg;
        let mut outputs = self.outputs;
        outputs.push("manifest.json".into());
        let manifest = Manifest {
            experiment: cfg.experiment,
            version: VERSION.into(),
            config_hash: cfg.hash(),
            seeds: self.seeds,
            outputs,
            invariants: self.invariants,
            summary,
            config: cfg.clone(),
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        let mut f = BufWriter::new(File::create(cfg.output_dir.join("manifest.json"))?);
        serde_json::to_writer_pretty(&mut f, &manifest)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(manifest)
    }
}

/// Runs the configured experiment. Outputs and the manifest are written even
/// when an invariant check fails; the failure is then returned as
/// [`Error::Invariant`].
pub fn run(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.validate()?;
    let start = Instant::now();
    let mut run = Run::new(cfg);
    log::info!("running {} into {}", cfg.experiment, cfg.output_dir.display());
    let summary = match cfg.experiment {
        ExperimentKind::Solve => run_solve(&mut run)?,
        ExperimentKind::Simulate => run_simulate(&mut run)?,
        ExperimentKind::Generate => run_generate(&mut run)?,
        ExperimentKind::Infer => run_infer(&mut run)?,
        ExperimentKind::ForwardRate => run_forward_rate(&mut run)?,
        ExperimentKind::InverseRate => run_inverse_rate(&mut run)?,
        ExperimentKind::ChaosTrend => run_chaos_trend(&mut run)?,
        ExperimentKind::StabilityProfile => run_stability_profile(&mut run)?,
    };
    let manifest = run.finish(summary, start)?;
    if manifest.invariants.violations.is_empty() {
        Ok(manifest)
    } else {
        Err(Error::Invariant(manifest.invariants.violations.join("; ")))
    }
}

fn f2s(v: f64) -> String {
    v.to_string()
}

fn run_solve(run: &mut Run) -> Result<serde_json::Value> {
    let cfg = run.cfg;
    let (w, phi) = (cfg.potential()?, cfg.initial()?);
    let rho = solve_mckean_vlasov(&w, &phi, &cfg.solver)?;
    rho.write_csv(run.create("trajectory.csv")?)?;
    let meta = TrajectoryMeta::new(&rho, &cfg.solver, &w, &phi);
    run.json("trajectory.json", &meta)?;
    let rows: Vec<Vec<String>> = trajectory_regularity_report(&rho, 3)
        .into_iter()
        .map(|e| {
            let mut r = vec![e.s.to_string(), f2s(e.sup_time), f2s(e.l2_time_next), f2s(e.l2_time_derivative)];
            r.extend(run.provenance(cfg.seed));
            r
        })
        .collect();
    run.table(
        "regularity.csv",
        &["s", "sup_time", "l2_time_next", "l2_time_derivative", "seed", "grid", "scheme"],
        &rows,
    )?;
    run.check_trajectory("trajectory", &rho);
    Ok(json!({ "invariants": rho.invariants(), "frames": rho.len() }))
}

fn run_simulate(run: &mut Run) -> Result<serde_json::Value> {
    let cfg = run.cfg;
    let (w, phi) = (cfg.potential()?, cfg.initial()?);
    let snaps = simulate(&w, &phi, &cfg.particles, cfg.seed)?;
    let d = cfg.grid.dim();
    write_snapshots_csv(&snaps, d, run.create("snapshots.csv")?)?;
    let hist = bin_histogram(&snaps, d, cfg.histogram.time_bins, cfg.histogram.space_bins)?;
    hist.write_csv(run.create("histogram.csv")?)?;
    let on_torus = snaps.iter().all(|s| s.positions.iter().all(|x| (0..d).all(|a| x[a] > 0.0 && x[a] <= 1.0)));
    run.check(on_torus, "particle positions left (0,1]^d");
    let total: u64 = hist.counts.iter().sum();
    run.check(total as usize == snaps.len() * hist.particles, "histogram counts do not add up");
    Ok(json!({ "snapshots": snaps.len(), "particles": hist.particles }))
}

/// Data set for `generate`/`infer` according to the observation config.
fn make_data(
    cfg: &ExperimentConfig,
    w: &Potential,
    phi: &InitialCondition,
) -> Result<(ObservationSet, Option<DensityTrajectory>)> {
    let (mut data, rho) = match cfg.observation.source {
        DataSource::Pde => {
            let rho = solve_mckean_vlasov(w, phi, &cfg.solver)?;
            (generate_observations(&rho, cfg.observation.n, cfg.observation.sigma, cfg.seed)?, Some(rho))
        }
        DataSource::Histogram => {
            let snaps = simulate(w, phi, &cfg.particles, cfg.seed)?;
            let hist = bin_histogram(&snaps, cfg.grid.dim(), cfg.histogram.time_bins, cfg.histogram.space_bins)?;
            let mut data = observations_from_histogram(&hist)?;
            data.meta.seed = cfg.seed;
            data.meta.grid = Some(cfg.grid);
            (data, None)
        }
    };
    data.meta.potential = w.id().to_string();
    data.meta.initial = phi.id().to_string();
    Ok((data, rho))
}

fn run_generate(run: &mut Run) -> Result<serde_json::Value> {
    let cfg = run.cfg;
    let (w, phi) = (cfg.potential()?, cfg.initial()?);
    let (data, rho) = make_data(cfg, &w, &phi)?;
    data.write_csv(run.create("data.csv")?)?;
    data.write_sidecar(run.create("data.json")?)?;
    if let Some(rho) = &rho {
        run.check_trajectory("source trajectory", rho);
    }
    Ok(json!({ "records": data.len(), "sigma": data.sigma(), "source": cfg.observation.source }))
}

fn read_data(path: &Path) -> Result<ObservationSet> {
    ObservationSet::read(File::open(path)?, File::open(path.with_extension("json"))?)
}

/// Errors of a posterior-mean estimate against the truth, with the
/// zero-potential (prior mean) baselines.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RecoveryMetrics {
    /// `‖W̄ − W₀‖_{L²}`.
    pub w_error: f64,
    /// `‖0 − W₀‖_{L²}`.
    pub w_baseline: f64,
    /// `‖ρ_{W̄} − ρ_{W₀}‖_{L²(λ)}`.
    pub rho_error: f64,
    /// `‖ρ_0 − ρ_{W₀}‖_{L²(λ)}`.
    pub rho_baseline: f64,
}

pub fn recovery_metrics(
    wbar: &Potential,
    w0: &Potential,
    phi: &InitialCondition,
    solver: &SolverConfig,
) -> Result<(RecoveryMetrics, DensityTrajectory)> {
    let rho0 = solve_mckean_vlasov(w0, phi, solver)?;
    let rho_bar = solve_mckean_vlasov(wbar, phi, solver)?;
    let rho_zero = solve_mckean_vlasov(&Potential::zero(phi.grid()), phi, solver)?;
    let m = RecoveryMetrics {
        w_error: wbar.sub(w0)?.l2_norm(),
        w_baseline: w0.l2_norm(),
        rho_error: space_time_l2_distance(&rho_bar, &rho0)?,
        rho_baseline: space_time_l2_distance(&rho_zero, &rho0)?,
    };
    Ok((m, rho_bar))
}

/// Posterior inference on one data set: returns the chain, the posterior-mean
/// potential and the prior it was computed under. The prior is rescaled with
/// the size of the data set.
pub fn infer(
    spec: &PriorSpec,
    data: ObservationSet,
    phi: &InitialCondition,
    solver: &SolverConfig,
    chain: &ChainConfig,
) -> Result<(ChainResult, Potential, PriorModel)> {
    let mut spec = *spec;
    spec.n_for_rescale = data.len().max(2);
    let prior = PriorModel::new(spec, phi.grid())?;
    let lik = LikelihoodEvaluator::new(data, phi.clone(), *solver)?;
    let res = run_chain(&prior, &lik, chain)?;
    let wbar = prior.realize(&posterior_mean(&res.samples)?)?;
    Ok((res, wbar, prior))
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn run_infer(run: &mut Run) -> Result<serde_json::Value> {
    let cfg = run.cfg;
    let (w0, phi) = (cfg.potential()?, cfg.initial()?);
    let data = match &cfg.observation.data {
        Some(p) => read_data(p)?,
        None => make_data(cfg, &w0, &phi)?.0,
    };
    let records = data.len();
    let (res, wbar, prior) = infer(&cfg.prior, data, &phi, &cfg.solver, &cfg.chain)?;
    run.seeds = vec![cfg.seed, cfg.chain.seed];
    res.write_csv(run.create("chain.csv")?)?;
    let vbar = posterior_mean(&res.samples)?;
    vbar.write_csv(run.create("posterior_mean.csv")?)?;
    wbar.fourier().write_csv(run.create("posterior_potential_fourier.csv")?)?;

    // Pointwise 5%/95% envelope over up to 200 evenly spaced samples.
    let grid = cfg.grid;
    let take = res.samples.len().min(200);
    let draws: Vec<Vec<f64>> = (0..take)
        .map(|i| prior.realize(&res.samples[i * res.samples.len() / take]).map(|p| p.repr().values().to_vec()))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(grid.len());
    for j in 0..grid.len() {
        let mut col: Vec<f64> = draws.iter().map(|d| d[j]).collect();
        col.sort_by(f64::total_cmp);
        let x = grid.node(j);
        let mut r = vec![f2s(x[0])];
        if grid.dim() == 2 {
            r.push(f2s(x[1]));
        }
        r.extend([w0.repr().values()[j], wbar.repr().values()[j], quantile(&col, 0.05), quantile(&col, 0.95)].map(f2s));
        r.extend(run.provenance(cfg.chain.seed));
        rows.push(r);
    }
    let header: &[&str] = if grid.dim() == 1 {
        &["x1", "truth", "posterior_mean", "lower", "upper", "seed", "grid", "scheme"]
    } else {
        &["x1", "x2", "truth", "posterior_mean", "lower", "upper", "seed", "grid", "scheme"]
    };
    run.table("potentials.csv", header, &rows)?;

    let (metrics, rho_bar) = recovery_metrics(&wbar, &w0, &phi, &cfg.solver)?;
    rho_bar.write_csv(run.create("plugin_trajectory.csv")?)?;
    run.check_trajectory("plug-in trajectory", &rho_bar);
    let summary = res.summary()?;
    run.json("chain_summary.json", &summary)?;
    Ok(json!({
        "records": records,
        "band_limit": prior.band_limit(),
        "prior_divisor": prior.divisor(),
        "acceptance_rate": summary.acceptance_rate,
        "final_beta": summary.final_beta,
        "solves": summary.solves,
        "chain_wall_time_s": summary.wall_time_s,
        "metrics": metrics,
    }))
}

/// One `(N, seed)` cell of a rate table.
#[derive(Debug, Clone, Serialize)]
pub struct RateCell {
    pub n: usize,
    pub seed: u64,
    pub band: usize,
    pub metrics: Option<RecoveryMetrics>,
    pub acceptance: f64,
    pub status: String,
}

impl RateCell {
    pub fn w_error(&self) -> f64 {
        self.metrics.map_or(f64::NAN, |m| m.w_error)
    }

    pub fn rho_error(&self) -> f64 {
        self.metrics.map_or(f64::NAN, |m| m.rho_error)
    }
}

/// Runs every `(N, seed)` cell concurrently. Data for a seed are drawn once
/// at the largest `N` and truncated, so data sets are nested in `N`. With
/// `inverse`, the prior band is `K_N`; otherwise the configured one.
pub fn rate_cells(cfg: &ExperimentConfig, inverse: bool) -> Result<Vec<RateCell>> {
    let (w0, phi) = (cfg.potential()?, cfg.initial()?);
    let rho0 = solve_mckean_vlasov(&w0, &phi, &cfg.solver)?;
    let n_max = *cfg.rate.n_grid.iter().max().ok_or_else(|| Error::Config("rate.N_grid is empty".into()))?;
    let data: Vec<(u64, ObservationSet)> = cfg
        .rate
        .seeds
        .iter()
        .map(|&s| generate_observations(&rho0, n_max, cfg.observation.sigma, s).map(|d| (s, d)))
        .collect::<Result<_>>()?;
    let d = cfg.grid.dim();
    let mut jobs = Vec::new();
    for &n in &cfg.rate.n_grid {
        for (s, set) in &data {
            jobs.push((n, *s, set));
        }
    }
    let mut cells: Vec<RateCell> = jobs
        .into_par_iter()
        .map(|(n, seed, set)| {
            let mut spec = cfg.prior;
            if inverse {
                spec.band_limit = Some(default_band_limit(spec.alpha, spec.beta_nominal as f64, d, n));
            }
            let chain = ChainConfig { seed, ..cfg.chain };
            let outcome = infer(&spec, set.prefix(n), &phi, &cfg.solver, &chain).and_then(|(res, wbar, prior)| {
                let (m, _) = recovery_metrics(&wbar, &w0, &phi, &cfg.solver)?;
                Ok((m, res.acceptance_rate, prior.band_limit()))
            });
            match outcome {
                Ok((m, acc, band)) => {
                    RateCell { n, seed, band, metrics: Some(m), acceptance: acc, status: "ok".into() }
                }
                Err(e) => {
                    log::warn!("rate cell N = {n}, seed = {seed} failed: {e}");
                    let band = spec.band_limit.unwrap_or(0);
                    RateCell { n, seed, band, metrics: None, acceptance: f64::NAN, status: e.to_string() }
                }
            }
        })
        .collect();
    cells.sort_by_key(|c| (c.n, c.seed));
    Ok(cells)
}

/// Median over seeds of `value` per `N` (failed cells skipped).
pub fn medians_by_n(cells: &[RateCell], value: impl Fn(&RateCell) -> f64) -> Vec<(usize, f64)> {
    let mut ns: Vec<usize> = cells.iter().map(|c| c.n).collect();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let v: Vec<f64> = cells.iter().filter(|c| c.n == n).map(&value).filter(|v| v.is_finite()).collect();
            (n, median(&v))
        })
        .collect()
}

pub fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

fn seeds_label(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

fn run_forward_rate(run: &mut Run) -> Result<serde_json::Value> {
    let cfg = run.cfg;
    let cells = rate_cells(cfg, false)?;
    run.seeds = cfg.rate.seeds.clone();
    let (a, b, d) = (cfg.prior.alpha, cfg.prior.beta_nominal as f64, cfg.grid.dim());
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            let dn = delta_n(a, b, d, c.n);
            let mut r = vec![c.n.to_string(), f2s(c.rho_error()), f2s(dn), f2s(c.rho_error() / dn), c.band.to_string()];
            r.push(f2s(c.acceptance));
            r.push(c.status.clone());
            r.extend(run.provenance(c.seed));
            r
        })
        .collect();
    run.table(
        "forward_rate.csv",
        &["N", "error", "delta_N", "ratio", "K", "acceptance", "status", "seed", "grid", "scheme"],
        &rows,
    )?;
    let med = medians_by_n(&cells, RateCell::rho_error);
    let label = seeds_label(&cfg.rate.seeds);
    let rows: Vec<Vec<String>> = med
        .iter()
        .map(|&(n, e)| {
            let mut r = vec![n.to_string(), f2s(e), f2s(delta_n(a, b, d, n))];
            r.extend(run.provenance(&label));
            r
        })
        .collect();
    run.table("forward_rate_median.csv", &["N", "median_error", "delta_N", "seed", "grid", "scheme"], &rows)?;
    let (ns, es): (Vec<f64>, Vec<f64>) = med.iter().map(|&(n, e)| (n as f64, e)).unzip();
    Ok(json!({
        "medians": med,
        "strictly_decreasing": strictly_decreasing(&es),
        "observed_slope": log_log_slope(&ns, &es),
        "theoretical_slope": -(a + 1.0 + b) / (2.0 * (a + 1.0) + 2.0 * b + d as f64),
        "failed_cells": cells.iter().filter(|c| c.metrics.is_none()).count(),
    }))
}

/// ζ used by the inverse-rate experiment.
fn rate_zeta(cfg: &ExperimentConfig, phi: &InitialCondition) -> f64 {
    cfg.rate.zeta.or_else(|| phi.decon_params().map(|p| p.zeta)).unwrap_or(2.0)
}

fn run_inverse_rate(run: &mut Run) -> Result<serde_json::Value> {
    let cfg = run.cfg;
    let phi = cfg.initial()?;
    let zeta = rate_zeta(cfg, &phi);
    let check = verify_decon(&phi, zeta);
    if !check.holds {
        return Err(Error::NotDeconvolvable { best_c: check.best_c });
    }
    let cells = rate_cells(cfg, true)?;
    run.seeds = cfg.rate.seeds.clone();
    let (a, b, d) = (cfg.prior.alpha, cfg.prior.beta_nominal as f64, cfg.grid.dim());
    let theta = theta_rate(a, b, d, zeta);
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            let mut r = vec![c.n.to_string(), f2s(c.w_error()), c.band.to_string(), f2s(theta), f2s(c.acceptance)];
            r.push(c.status.clone());
            r.extend(run.provenance(c.seed));
            r
        })
        .collect();
    run.table(
        "inverse_rate.csv",
        &["N", "error", "K_N", "theta", "acceptance", "status", "seed", "grid", "scheme"],
        &rows,
    )?;
    let med = medians_by_n(&cells, RateCell::w_error);
    let label = seeds_label(&cfg.rate.seeds);
    let rows: Vec<Vec<String>> = med
        .iter()
        .map(|&(n, e)| {
            let k = default_band_limit(a, b, d, n);
            let mut r = vec![n.to_string(), f2s(e), k.to_string(), f2s(theta)];
            r.extend(run.provenance(&label));
            r
        })
        .collect();
    run.table("inverse_rate_median.csv", &["N", "median_error", "K_N", "theta", "seed", "grid", "scheme"], &rows)?;
    let (ns, es): (Vec<f64>, Vec<f64>) = med.iter().map(|&(n, e)| (n as f64, e)).unzip();
    Ok(json!({
        "medians": med,
        "theta": theta,
        "zeta": zeta,
        "decon_best_c": check.best_c,
        "strictly_decreasing": strictly_decreasing(&es),
        "observed_slope": log_log_slope(&ns, &es),
        "theoretical_slope": -theta,
        "failed_cells": cells.iter().filter(|c| c.metrics.is_none()).count(),
    }))
}

/// λ-normalized L¹ distance between histogram densities and the exact PDE
/// cell averages, the latter averaged over the snapshot times falling in each
/// time bin. Also returns the expected distance under pure multinomial
/// binning noise with the PDE cell probabilities (normal approximation,
/// independent samples).
pub fn histogram_l1_distance(
    hist: &HistogramData,
    snapshots: &[Snapshot],
    rho: &DensityTrajectory,
) -> Result<(f64, f64)> {
    let s = hist.space_bins_per_axis;
    let cells = hist.space_cells();
    let vol = hist.bin_volume();
    let mut reference = vec![vec![0.0; cells]; hist.time_bins];
    for snap in snapshots {
        let i = rho.index_of_time(snap.time);
        if (rho.times()[i] - snap.time).abs() > 1e-9 * rho.horizon().max(1.0) {
            return Err(Error::Config(format!("snapshot time {} is not on the solver mesh", snap.time)));
        }
        let avg = cell_averages(&rho.spectra()[i], s)?;
        let tb = time_bin(snap.time, hist.horizon, hist.time_bins);
        for (r, a) in reference[tb].iter_mut().zip(avg) {
            *r += a / hist.snapshots_per_bin[tb] as f64;
        }
    }
    let (mut l1, mut noise) = (0.0, 0.0);
    for (tb, refs) in reference.iter().enumerate() {
        let m = (hist.snapshots_per_bin[tb] * hist.particles) as f64;
        for (cell, r) in refs.iter().enumerate() {
            l1 += (hist.density(tb, cell) - r).abs() * vol;
            let p = (r * vol).clamp(0.0, 1.0);
            noise += (2.0 / std::f64::consts::PI).sqrt() * (p * (1.0 - p) / m).sqrt();
        }
    }
    let tb = hist.time_bins as f64;
    Ok((l1 / tb, noise / tb))
}

#[derive(Debug, Clone, Serialize)]
pub struct ChaosCell {
    pub n: usize,
    pub seed: u64,
    pub l1: f64,
    pub noise: f64,
}

pub fn chaos_cells(cfg: &ExperimentConfig) -> Result<Vec<ChaosCell>> {
    let (w, phi) = (cfg.potential()?, cfg.initial()?);
    let solver = SolverConfig { horizon: cfg.particles.horizon, ..cfg.solver };
    let rho = solve_mckean_vlasov(&w, &phi, &solver)?;
    let mut jobs = Vec::new();
    for &n in &cfg.chaos.n_grid {
        for &s in &cfg.chaos.seeds {
            jobs.push((n, s));
        }
    }
    let mut cells: Vec<ChaosCell> = jobs
        .into_par_iter()
        .map(|(n, seed)| {
            let sim = SimulationConfig { n, ..cfg.particles };
            let snaps = simulate(&w, &phi, &sim, seed)?;
            let hist = bin_histogram(&snaps, cfg.grid.dim(), cfg.chaos.time_bins, cfg.chaos.space_bins)?;
            let (l1, noise) = histogram_l1_distance(&hist, &snaps, &rho)?;
            Ok(ChaosCell { n, seed, l1, noise })
        })
        .collect::<Result<_>>()?;
    cells.sort_by_key(|c| (c.n, c.seed));
    Ok(cells)
}

fn run_chaos_trend(run: &mut Run) -> Result<serde_json::Value> {
    let cfg = run.cfg;
    let cells = chaos_cells(cfg)?;
    run.seeds = cfg.chaos.seeds.clone();
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            let mut r = vec![c.n.to_string(), f2s(c.l1), f2s(c.noise)];
            r.extend(run.provenance(c.seed));
            r
        })
        .collect();
    run.table("chaos_trend.csv", &["n", "L1_distance", "noise_floor", "seed", "grid", "scheme"], &rows)?;
    let mut ns: Vec<usize> = cells.iter().map(|c| c.n).collect();
    ns.dedup();
    let label = seeds_label(&cfg.chaos.seeds);
    let med: Vec<(usize, f64)> =
        ns.iter().map(|&n| (n, median(&cells.iter().filter(|c| c.n == n).map(|c| c.l1).collect::<Vec<_>>()))).collect();
    let rows: Vec<Vec<String>> = med
        .iter()
        .map(|&(n, v)| {
            let mut r = vec![n.to_string(), f2s(v)];
            r.extend(run.provenance(&label));
            r
        })
        .collect();
    run.table("chaos_trend_median.csv", &["n", "median_L1_distance", "seed", "grid", "scheme"], &rows)?;
    let meds: Vec<f64> = med.iter().map(|m| m.1).collect();
    Ok(json!({ "medians": med, "strictly_decreasing": strictly_decreasing(&meds) }))
}

/// Per-band summary of a stability profile.
#[derive(Debug, Clone, Serialize)]
pub struct BandProfile {
    #[serde(rename = "K")]
    pub band: usize,
    /// ι_K(0) evaluated on φ̂ directly.
    pub iota0_phi: f64,
    /// ι_K(0) evaluated on the trajectory's first frame.
    pub iota0_trajectory: f64,
    /// Largest mesh time with `min|ρ̂(t,k)| ≥ ½ min|φ̂(k)|` over `0<|k|≤K`.
    pub smallness_t: f64,
    /// `t₀ = (c/2C_lip)K^{−ζ}` when φ carries deconvolution parameters.
    pub t0: Option<f64>,
    pub persistence: Option<PersistenceReport>,
}

pub fn stability_profile(rho: &DensityTrajectory, phi: &InitialCondition, bands: &[usize]) -> Vec<BandProfile> {
    let c_lip = time_lipschitz_constant(rho);
    bands
        .iter()
        .map(|&k| {
            let t0 = phi.decon_params().map(|p| short_time_t0(p.c, p.zeta, k, c_lip).min(rho.horizon()));
            BandProfile {
                band: k,
                iota0_phi: stability_constant_coeffs(phi.fourier(), k),
                iota0_trajectory: stability_constant_coeffs(&rho.spectra()[0], k),
                smallness_t: smallness_horizon(rho, k),
                t0,
                persistence: t0.map(|t0| mode_persistence(rho, k, t0, c_lip)),
            }
        })
        .collect()
}

fn run_stability_profile(run: &mut Run) -> Result<serde_json::Value> {
    let cfg = run.cfg;
    let (w, phi) = (cfg.potential()?, cfg.initial()?);
    let rho = solve_mckean_vlasov(&w, &phi, &cfg.solver)?;
    run.check_trajectory("trajectory", &rho);
    let idx: Vec<usize> = if cfg.stability.times.is_empty() {
        (0..rho.len()).collect()
    } else {
        let mut v: Vec<usize> = cfg.stability.times.iter().map(|&t| rho.index_of_time(t)).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let mut rows = Vec::new();
    for &i in &idx {
        for &k in &cfg.stability.bands {
            let c = &rho.spectra()[i];
            let mut r =
                vec![f2s(rho.times()[i]), k.to_string(), f2s(stability_constant_coeffs(c, k)), f2s(min_mode(c, k))];
            r.extend(run.provenance(cfg.seed));
            rows.push(r);
        }
    }
    run.table("stability_profile.csv", &["t", "K", "iota", "min_mode", "seed", "grid", "scheme"], &rows)?;
    let bands = stability_profile(&rho, &phi, &cfg.stability.bands);
    for b in &bands {
        let same = b.iota0_phi == b.iota0_trajectory
            || (b.iota0_phi - b.iota0_trajectory).abs() <= 1e-10 * b.iota0_phi.abs().max(1.0);
        run.check(same, format!("K = {}: iota(0) from trajectory differs from phi", b.band));
        if let Some(p) = &b.persistence {
            run.check(p.holds, format!("K = {}: mode persistence margin {:e}", b.band, p.worst_margin));
        }
    }
    Ok(json!({ "bands": bands, "c_lip": time_lipschitz_constant(&rho) }))
}

/// Inequality checks between the configured potential `W₀` and
/// `diagnose.compare` (`W`): entropy stability, forward Lipschitz, the
/// short-time recovery bound (when `W` is band-limited by `diagnose.K`) and
/// mode persistence. Reports are appended to the JSON-lines file
/// `output_dir/<diagnose.log>`.
pub fn run_diagnose(cfg: &ExperimentConfig) -> Result<Vec<InequalityReport>> {
    fs::create_dir_all(&cfg.output_dir)?;
    let (w0, phi) = (cfg.potential()?, cfg.initial()?);
    let w = potential_from_id(&cfg.diagnose.compare, cfg.grid)?;
    let mut reports = vec![
        check_entropy_stability(&w0, &w, &phi, &cfg.solver)?,
        check_forward_lipschitz(&w0, &w, &phi, cfg.diagnose.beta, &cfg.solver)?,
    ];
    let rho0 = solve_mckean_vlasov(&w0, &phi, &cfg.solver)?;
    let band = cfg.diagnose.band;
    if let Some(p) = phi.decon_params() {
        let c_lip = time_lipschitz_constant(&rho0);
        let t0 = short_time_t0(p.c, p.zeta, band, c_lip).min(rho0.horizon());
        if w.effective_band(1e-12) <= band {
            let rho = solve_mckean_vlasov(&w, &phi, &cfg.solver)?;
            reports.push(short_time_recovery_bound(&w, &w0, &rho, &rho0, band, t0, cfg.diagnose.alpha, p.zeta)?);
        }
        let pr = mode_persistence(&rho0, band, t0, c_lip);
        let deficit = (-pr.worst_margin).max(0.0);
        reports.push(InequalityReport::new("mode_persistence", deficit, 0.0, serde_json::to_value(&pr)?));
    }
    append_jsonl(&cfg.output_dir.join(&cfg.diagnose.log), &reports)?;
    Ok(reports)
}
