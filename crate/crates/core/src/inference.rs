//! pCN Markov chain Monte Carlo over prior coefficient vectors.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{InitialCondition, Potential};
use crate::observation::LikelihoodEvaluator;
use crate::pde::{solve_mckean_vlasov, DensityTrajectory, SolverConfig};
use crate::priors::{CoefficientVector, PriorModel};
use crate::util::rng;

/// Acceptance band targeted while adapting the step size during burn-in.
pub const TARGET_ACCEPTANCE: (f64, f64) = (0.15, 0.4);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainConfig {
    pub pcn_beta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Tune `pcn_beta` during burn-in; frozen afterwards.
    pub adapt: bool,
    pub adapt_window: usize,
    /// Reject proposals with `‖W‖_{C²}` above this bound; the norm is
    /// logged either way.
    pub c2_bound: Option<f64>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            pcn_beta: 0.1,
            iterations: 5000,
            burn_in: 1000,
            thin: 1,
            seed: 1,
            adapt: true,
            adapt_window: 50,
            c2_bound: None,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pcn_beta) {
            return Err(Error::InvalidParameter(format!("pcn_beta = {} must lie in [0, 1]", self.pcn_beta)));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidParameter(format!(
                "burn_in ({}) must be below iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 || self.adapt_window == 0 {
            return Err(Error::InvalidParameter("thin and adapt_window must be positive".into()));
        }
        if let Some(m) = self.c2_bound {
            if !(m > 0.0) {
                return Err(Error::InvalidParameter(format!("c2_bound = {m} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ChainState {
    pub coeffs: CoefficientVector,
    pub loglik: f64,
    /// `‖W‖_{C²}` of the realized potential.
    pub c2_norm: f64,
    pub trajectory: Option<DensityTrajectory>,
}

/// Outcome of one pCN transition.
#[derive(Debug, Clone)]
pub struct Step {
    pub state: ChainState,
    pub accepted: bool,
    /// A PDE solve was performed for the proposal.
    pub solved: bool,
    /// The proposal's solve failed (and the proposal was rejected).
    pub failed: bool,
}

pub fn initial_state(prior: &PriorModel, lik: &LikelihoodEvaluator, coeffs: CoefficientVector) -> Result<ChainState> {
    let w = prior.realize(&coeffs)?;
    let l = lik.evaluate(&w)?;
    Ok(ChainState { coeffs, loglik: l.loglik, c2_norm: w.c2_norm(), trajectory: l.trajectory })
}

/// One pCN step: `v' = √(1−β²) v + β ξ`, `ξ` a prior draw, accepted when
/// `ln u < ℓ(v') − ℓ(v)`. With a `c2_bound`, proposals outside the ball are
/// rejected before any solve, which targets the prior restricted to it.
pub fn pcn_step(
    state: &ChainState,
    prior: &PriorModel,
    lik: &LikelihoodEvaluator,
    beta: f64,
    c2_bound: Option<f64>,
    r: &mut ChaCha8Rng,
) -> Step {
    let xi = prior.draw(r);
    let u: f64 = r.random();
    if beta == 0.0 {
        return Step { state: state.clone(), accepted: true, solved: false, failed: false };
    }
    let keep = (1.0 - beta * beta).sqrt();
    let proposal = CoefficientVector(state.coeffs.0.iter().zip(&xi.0).map(|(v, x)| keep * v + beta * x).collect());
    let w = match prior.realize(&proposal) {
        Ok(w) => w,
        Err(e) => {
            log::debug!("proposal rejected, cannot realize: {e}");
            return Step { state: state.clone(), accepted: false, solved: false, failed: true };
        }
    };
    let c2 = w.c2_norm();
    if c2_bound.is_some_and(|m| c2 > m) {
        return Step { state: state.clone(), accepted: false, solved: false, failed: false };
    }
    if lik.is_trivial() {
        // ℓ' = ℓ: accepted without a solve.
        return Step {
            state: ChainState { coeffs: proposal, loglik: state.loglik, c2_norm: c2, trajectory: None },
            accepted: true,
            solved: false,
            failed: false,
        };
    }
    match lik.evaluate(&w) {
        Ok(l) if u.ln() < l.loglik - state.loglik => Step {
            state: ChainState { coeffs: proposal, loglik: l.loglik, c2_norm: c2, trajectory: l.trajectory },
            accepted: true,
            solved: true,
            failed: false,
        },
        Ok(_) => Step { state: state.clone(), accepted: false, solved: true, failed: false },
        Err(e) => {
            log::debug!("proposal rejected after solver failure: {e}");
            Step { state: state.clone(), accepted: false, solved: true, failed: true }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainResult {
    /// Post-burn-in, thinned samples.
    pub samples: Vec<CoefficientVector>,
    /// Per-iteration acceptance flags, log-likelihoods and states.
    pub accepted: Vec<bool>,
    pub loglik: Vec<f64>,
    pub trace: Vec<CoefficientVector>,
    /// `‖W‖_{C²}` of the state after each iteration.
    pub c2_norm: Vec<f64>,
    pub burn_in: usize,
    /// Acceptance rate after burn-in.
    pub acceptance_rate: f64,
    pub burn_in_acceptance: f64,
    pub final_beta: f64,
    pub solves: usize,
    pub failures: usize,
    pub warnings: Vec<String>,
    pub wall_time_s: f64,
}

/// Runs the chain from the prior mean (zero potential).
pub fn run_chain(prior: &PriorModel, lik: &LikelihoodEvaluator, cfg: &ChainConfig) -> Result<ChainResult> {
    cfg.validate()?;
    let start = Instant::now();
    let mut r = rng(cfg.seed, 0);
    // The zero potential always solves; a failure here is a configuration error.
    let mut state = initial_state(prior, lik, CoefficientVector::zeros(prior.dim()))?;
    let mut solves = usize::from(!lik.is_trivial());
    let mut failures = 0;
    let mut beta = cfg.pcn_beta;
    let mut window = 0usize;
    let (mut acc_burn, mut acc_main) = (0usize, 0usize);
    let mut out = ChainResult {
        samples: Vec::new(),
        accepted: Vec::with_capacity(cfg.iterations),
        loglik: Vec::with_capacity(cfg.iterations),
        trace: Vec::with_capacity(cfg.iterations),
        c2_norm: Vec::with_capacity(cfg.iterations),
        burn_in: cfg.burn_in,
        acceptance_rate: 0.0,
        burn_in_acceptance: 0.0,
        final_beta: beta,
        solves: 0,
        failures: 0,
        warnings: Vec::new(),
        wall_time_s: 0.0,
    };
    for it in 0..cfg.iterations {
        let step = pcn_step(&state, prior, lik, beta, cfg.c2_bound, &mut r);
        solves += usize::from(step.solved);
        failures += usize::from(step.failed);
        state = step.state;
        if it < cfg.burn_in {
            acc_burn += usize::from(step.accepted);
            window += usize::from(step.accepted);
            if cfg.adapt && (it + 1) % cfg.adapt_window == 0 {
                let rate = window as f64 / cfg.adapt_window as f64;
                if rate < TARGET_ACCEPTANCE.0 {
                    beta = (beta * 0.7).max(1e-4);
                } else if rate > TARGET_ACCEPTANCE.1 {
                    beta = (beta * 1.4).min(1.0);
                }
                window = 0;
            }
        } else {
            acc_main += usize::from(step.accepted);
            if (it - cfg.burn_in).is_multiple_of(cfg.thin) {
                out.samples.push(state.coeffs.clone());
            }
        }
        out.accepted.push(step.accepted);
        out.loglik.push(state.loglik);
        out.trace.push(state.coeffs.clone());
        out.c2_norm.push(state.c2_norm);
    }
    out.acceptance_rate = acc_main as f64 / (cfg.iterations - cfg.burn_in) as f64;
    out.burn_in_acceptance = if cfg.burn_in > 0 { acc_burn as f64 / cfg.burn_in as f64 } else { f64::NAN };
    out.final_beta = beta;
    out.solves = solves;
    out.failures = failures;
    if out.acceptance_rate < 0.01 {
        out.warnings.push(format!("acceptance rate {:.4} is below 0.01", out.acceptance_rate));
    }
    if failures > 0 {
        out.warnings.push(format!("{failures} proposals rejected after solver failures"));
    }
    for w in &out.warnings {
        log::warn!("{w}");
    }
    out.wall_time_s = start.elapsed().as_secs_f64();
    Ok(out)
}

/// Coordinatewise average of the samples.
pub fn posterior_mean(samples: &[CoefficientVector]) -> Result<CoefficientVector> {
    let first = samples.first().ok_or_else(|| Error::Empty("no samples".into()))?;
    let n = first.len();
    if samples.iter().any(|s| s.len() != n) {
        return Err(Error::InvalidParameter("samples differ in dimension".into()));
    }
    let mut acc = vec![0.0; n];
    for s in samples {
        for (a, v) in acc.iter_mut().zip(&s.0) {
            *a += v;
        }
    }
    let m = samples.len() as f64;
    Ok(CoefficientVector(acc.into_iter().map(|a| a / m).collect()))
}

/// The density implied by a point estimate of the potential.
pub fn plugin_density(wbar: &Potential, phi: &InitialCondition, cfg: &SolverConfig) -> Result<DensityTrajectory> {
    solve_mckean_vlasov(wbar, phi, cfg)
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainSummary {
    pub acceptance_rate: f64,
    pub burn_in_acceptance: f64,
    pub final_beta: f64,
    pub solves: usize,
    pub failures: usize,
    pub samples: usize,
    /// Post-burn-in mean and maximum of `‖W‖_{C²}`.
    pub c2_norm_mean: f64,
    pub c2_norm_max: f64,
    /// Not serialized, so that exported summaries are reproducible.
    #[serde(skip_serializing)]
    pub wall_time_s: f64,
    pub posterior_mean: Vec<f64>,
    pub warnings: Vec<String>,
}

impl ChainResult {
    pub fn summary(&self) -> Result<ChainSummary> {
        let main = &self.c2_norm[self.burn_in.min(self.c2_norm.len())..];
        Ok(ChainSummary {
            acceptance_rate: self.acceptance_rate,
            burn_in_acceptance: self.burn_in_acceptance,
            final_beta: self.final_beta,
            solves: self.solves,
            failures: self.failures,
            samples: self.samples.len(),
            c2_norm_mean: main.iter().sum::<f64>() / main.len().max(1) as f64,
            c2_norm_max: main.iter().copied().fold(0.0, f64::max),
            wall_time_s: self.wall_time_s,
            posterior_mean: posterior_mean(&self.samples)?.0,
            warnings: self.warnings.clone(),
        })
    }

    /// CSV `iter,accepted,loglik,coeff_0,…`, one row per iteration.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let dim = self.trace.first().map_or(0, |v| v.len());
        let mut header = vec!["iter".to_string(), "accepted".into(), "loglik".into()];
        header.extend((0..dim).map(|j| format!("coeff_{j}")));
        out.write_record(&header)?;
        for (i, ((a, l), v)) in self.accepted.iter().zip(&self.loglik).zip(&self.trace).enumerate() {
            let mut row = vec![i.to_string(), u8::from(*a).to_string(), l.to_string()];
            row.extend(v.0.iter().map(|c| c.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}
