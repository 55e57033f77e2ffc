//! Monte Carlo oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::f64::consts::PI;

use mvinfer::inference::{run_chain, ChainConfig};
use mvinfer::observation::{LikelihoodEvaluator, ObservationSet};
use mvinfer::priors::{delta_n, sample_prior, PriorKind, PriorModel, PriorSpec, Rescale};
use mvinfer::{InitialCondition, Scheme, SolverConfig, TorusGrid};

/// Coefficient variance of mode `k`, written out independently of the
/// prior module.
pub fn oracle_variance(spec: &PriorSpec, d: usize, k: [i64; 2]) -> f64 {
    let k2 = (k[0] * k[0] + k[1] * k[1]) as f64;
    let base = match spec.kind {
        PriorKind::Matern => (2.0 * PI).powi(d as i32) / (1.0 + 4.0 * PI * PI * k2).powf(spec.alpha + 1.0),
        PriorKind::TruncatedFourier => 1.0 / (1.0 + 4.0 * PI * PI * k2).powf(spec.alpha + 1.0),
        PriorKind::ExpSeries => (-spec.r * (k[0].abs() + k[1].abs()) as f64).exp(),
    };
    let n = spec.n_for_rescale as f64;
    match spec.rescale {
        Rescale::None => base,
        Rescale::SqrtNDeltaN => {
            base / (n * delta_n(spec.alpha, spec.beta_nominal as f64, d, spec.n_for_rescale).powi(2))
        }
        Rescale::LogN => base / n.ln().powi(2),
    }
}

/// The prior specs exercised by the distributional checks.
pub fn prior_cases() -> Vec<(&'static str, PriorSpec, TorusGrid)> {
    let g1 = TorusGrid::new(1, 32).unwrap();
    let g2 = TorusGrid::new(2, 16).unwrap();
    vec![
        (
            "matern d=1",
            PriorSpec { kind: PriorKind::Matern, alpha: 2.0, band_limit: Some(4), ..Default::default() },
            g1,
        ),
        (
            "matern d=2",
            PriorSpec { kind: PriorKind::Matern, alpha: 2.5, band_limit: Some(2), ..Default::default() },
            g2,
        ),
        (
            "truncated sqrtN_deltaN",
            PriorSpec {
                kind: PriorKind::TruncatedFourier,
                alpha: 2.0,
                band_limit: Some(3),
                rescale: Rescale::SqrtNDeltaN,
                n_for_rescale: 1000,
                ..Default::default()
            },
            g1,
        ),
        (
            "exp_series logN",
            PriorSpec {
                kind: PriorKind::ExpSeries,
                r: 1.0,
                band_limit: Some(4),
                rescale: Rescale::LogN,
                n_for_rescale: 500,
                ..Default::default()
            },
            g1,
        ),
        (
            "exp_series d=2",
            PriorSpec { kind: PriorKind::ExpSeries, r: 0.5, band_limit: Some(2), ..Default::default() },
            g2,
        ),
    ]
}

/// `max_j |v̂_j − σ_j²| / SE_j` over `seeds` seeded prior draws, with the
/// Gaussian standard error `σ_j² √(2/n)` of the known-mean variance estimate.
pub fn prior_variance_zscore(spec: &PriorSpec, grid: TorusGrid, seeds: u64) -> f64 {
    let model = PriorModel::new(*spec, grid).unwrap();
    let mut sums = vec![0.0; model.dim()];
    for seed in 0..seeds {
        let (v, _) = sample_prior(spec, seed, grid).unwrap();
        for (s, x) in sums.iter_mut().zip(v.values()) {
            *s += x * x;
        }
    }
    let n = seeds as f64;
    model
        .basis()
        .iter()
        .zip(&sums)
        .map(|(e, s)| {
            let var = oracle_variance(spec, grid.dim(), e.freq);
            (s / n - var).abs() / (var * (2.0 / n).sqrt())
        })
        .fold(0.0, f64::max)
}

/// Batch-means standard error of the mean of `x`.
pub fn batch_means_se(x: &[f64], batches: usize) -> f64 {
    let b = x.len() / batches;
    let means: Vec<f64> = (0..batches).map(|i| x[i * b..(i + 1) * b].iter().sum::<f64>() / b as f64).collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

pub struct PcnTargeting {
    pub acceptance: f64,
    pub zscore: f64,
}

/// pCN with an empty data set: a fixed step `β = 0.5`, `steps` retained
/// samples after a short burn-in. Returns the largest standardized deviation
/// of the empirical mode variances from the prior's.
pub fn pcn_prior_targeting(spec: &PriorSpec, grid: TorusGrid, steps: usize, seed: u64) -> PcnTargeting {
    let model = PriorModel::new(*spec, grid).unwrap();
    let phi = InitialCondition::uniform(grid);
    let solver = SolverConfig::new(0.25, 64, Scheme::Imex1);
    let lik = LikelihoodEvaluator::new(ObservationSet::empty(grid.dim(), solver.horizon), phi, solver).unwrap();
    let burn_in = 200;
    let cfg = ChainConfig {
        pcn_beta: 0.5,
        iterations: steps + burn_in,
        burn_in,
        thin: 1,
        seed,
        adapt: false,
        adapt_window: 50,
        c2_bound: None,
    };
    let res = run_chain(&model, &lik, &cfg).unwrap();
    let mut zscore = 0.0f64;
    for (j, e) in model.basis().iter().enumerate() {
        let sq: Vec<f64> = res.samples.iter().map(|v| v.values()[j].powi(2)).collect();
        let mean = sq.iter().sum::<f64>() / sq.len() as f64;
        let var = oracle_variance(spec, grid.dim(), e.freq);
        zscore = zscore.max((mean - var).abs() / batch_means_se(&sq, 50));
    }
    PcnTargeting { acceptance: res.acceptance_rate, zscore }
}
