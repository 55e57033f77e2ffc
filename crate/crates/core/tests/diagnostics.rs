use std::f64::consts::PI;

use mvinfer::constants::{self, reference_family, reference_grid, reference_solver, REFERENCE_ALPHA, REFERENCE_K};
use mvinfer::diagnostics::*;
use mvinfer::models::{cosine_potential, kuramoto, periodized_laplace};
use mvinfer::pde::solve_mckean_vlasov;
use mvinfer::{GridFunction, InitialCondition, Potential, TorusGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Composite Simpson rule on `[0, 1]` with `m` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, m: usize) -> f64 {
    let h = 1.0 / m as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..m {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

/// A random strictly positive density: normalized exp of a low-order
/// trigonometric polynomial.
fn random_density(grid: TorusGrid, r: &mut ChaCha8Rng) -> GridFunction {
    let coeffs: Vec<(f64, f64)> = (0..4).map(|_| (r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect();
    let f = GridFunction::from_fn(grid, |x| {
        let s: f64 = coeffs
            .iter()
            .enumerate()
            .map(|(k, (a, b))| {
                let w = 2.0 * PI * (k + 1) as f64 * x[0];
                (a * w.cos() + b * w.sin()) / (k + 1) as f64
            })
            .sum();
        s.exp()
    });
    let m = f.mean();
    f.scale(1.0 / m)
}

fn l1(p: &GridFunction, q: &GridFunction) -> f64 {
    p.sub(q).unwrap().l1_norm()
}

#[test]
fn relative_entropy_matches_simpson_oracle() {
    let grid = TorusGrid::new(1, 128).unwrap();
    let p = GridFunction::from_fn(grid, |x| 1.0 + 0.2 * (2.0 * PI * x[0]).cos());
    let q = GridFunction::constant(grid, 1.0);
    let oracle = simpson(
        |x| {
            let v = 1.0 + 0.2 * (2.0 * PI * x).cos();
            v * v.ln()
        },
        100_000,
    );
    assert!((relative_entropy(&p, &q).unwrap() - oracle).abs() < 1e-8);
}

#[test]
fn divergence_chain_on_random_pairs() {
    let grid = TorusGrid::new(1, 128).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..100 {
        let p = random_density(grid, &mut r);
        let q = random_density(grid, &mut r);
        let kl = relative_entropy(&p, &q).unwrap();
        let h2 = hellinger_sq(&p, &q).unwrap();
        assert!(h2 <= kl, "h^2 = {h2} > H = {kl}");
        assert!(h2.sqrt() <= kl.sqrt());
        assert!(l1(&p, &q).powi(2) <= 2.0 * kl, "Pinsker");
        let sup = p.sup_norm().max(q.sup_norm());
        assert!(p.sub(&q).unwrap().l2_norm().powi(2) <= 4.0 * sup * h2);
        assert!((h2 - hellinger_sq(&q, &p).unwrap()).abs() <= 1e-12);
    }
}

proptest! {
    #[test]
    fn relative_entropy_vanishes_only_on_the_diagonal(seed in 0u64..1000) {
        let grid = TorusGrid::new(1, 64).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let p = random_density(grid, &mut r);
        let q = random_density(grid, &mut r);
        prop_assert_eq!(relative_entropy(&p, &p).unwrap(), 0.0);
        let h = relative_entropy(&p, &q).unwrap();
        prop_assert!(h >= 0.0);
        if l1(&p, &q) > 1e-4 {
            prop_assert!(h > 1e-10);
        }
    }
}

#[test]
fn entropy_stability_examples() {
    let grid = reference_grid();
    let cfg = reference_solver();
    let k = kuramoto(grid, 1.0).unwrap();
    let phi2 = periodized_laplace(2, grid).unwrap();

    let same = check_entropy_stability(&k, &k, &phi2, &cfg).unwrap();
    assert_eq!((same.lhs, same.rhs), (0.0, 0.0));
    assert!(same.holds);

    let uniform = InitialCondition::uniform(grid);
    let flat = check_entropy_stability(&k, &Potential::zero(grid), &uniform, &cfg).unwrap();
    assert!(flat.lhs.abs() < 1e-20 && flat.rhs.abs() < 1e-20);
    assert!(flat.holds);

    let half = kuramoto(grid, 0.5).unwrap();
    let r = check_entropy_stability(&k, &half, &phi2, &cfg).unwrap();
    assert!(r.lhs > 0.0 && r.holds, "{r:?}");
}

#[test]
fn forward_lipschitz_examples() {
    let grid = reference_grid();
    let cfg = reference_solver();
    let phi = periodized_laplace(1, grid).unwrap();
    let k = kuramoto(grid, 1.0).unwrap();
    let zero = Potential::zero(grid);

    let same = check_forward_lipschitz(&k, &k, &phi, 4, &cfg).unwrap();
    assert_eq!(same.lhs, 0.0);
    assert!(same.holds);
    assert!(check_forward_lipschitz(&k, &zero, &phi, 3, &cfg).is_err());

    // Scaling family s·W₀ against 0: the ratio does not blow up as s → 0.
    let ratios: Vec<f64> = [0.1, 0.2, 0.4, 0.6, 0.8, 1.0]
        .iter()
        .map(|&s| {
            let r = check_forward_lipschitz(&k.scaled(s), &zero, &phi, 4, &cfg).unwrap();
            assert!(r.holds, "{r:?}");
            r.ratio
        })
        .collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    assert!(hi / lo < 2.0, "ratios {ratios:?}");

    let ab = check_forward_lipschitz(&k, &zero, &phi, 4, &cfg).unwrap();
    let ba = check_forward_lipschitz(&zero, &k, &phi, 4, &cfg).unwrap();
    assert!((ab.lhs - ba.lhs).abs() < 1e-12);
    assert_eq!(ab.rhs, ba.rhs);
}

#[test]
fn reference_family_holds_with_frozen_constants() {
    let family = reference_family().unwrap();
    let cfg = family.solver;
    let phi = &family.initials[1];
    for w1 in &family.potentials {
        for w2 in &family.potentials {
            if w1.id() == w2.id() {
                continue;
            }
            let e = check_entropy_stability(w1, w2, phi, &cfg).unwrap();
            assert!(e.holds, "{e:?}");
            for beta in [2, 4, 6] {
                let f = check_forward_lipschitz(w1, w2, phi, beta, &cfg).unwrap();
                assert!(f.holds, "{f:?}");
            }
        }
    }
}

#[test]
fn frozen_constants_are_current() {
    // The frozen constants must cover the calibration ratios and not be
    // stale by more than the documented margin.
    let cal = calibrate(&reference_family().unwrap()).unwrap();
    let pairs = [
        (cal.entropy_stability, constants::ENTROPY_STABILITY_C),
        (cal.forward_lipschitz[0], constants::FORWARD_LIPSCHITZ_C[0]),
        (cal.forward_lipschitz[1], constants::FORWARD_LIPSCHITZ_C[1]),
        (cal.forward_lipschitz[2], constants::FORWARD_LIPSCHITZ_C[2]),
        (cal.short_time, constants::SHORT_TIME_C),
    ];
    for (observed, frozen) in pairs {
        assert!(observed > 0.0);
        assert!(observed <= frozen, "{observed} exceeds frozen {frozen}");
        assert!(frozen <= observed * constants::CALIBRATION_MARGIN * 1.01, "{frozen} is stale against {observed}");
    }
}

#[test]
fn stability_constant_examples() {
    let grid = reference_grid();
    let cfg = reference_solver();
    let phi = periodized_laplace(1, grid).unwrap();
    let expected = (1.0 + 2.0 * PI * PI * 4.0).powi(2);
    assert!((stability_constant_coeffs(phi.fourier(), 2) / expected - 1.0).abs() < 1e-12);

    let rho = solve_mckean_vlasov(&kuramoto(grid, 1.0).unwrap(), &phi, &cfg).unwrap();
    for t in [0.0, 0.05, 0.25] {
        let mut last = 0.0;
        for k in 1..=6 {
            let v = stability_constant(&rho, k, t);
            assert!(v >= last);
            last = v;
        }
    }
    for k in 1..=4 {
        let a = stability_constant(&rho, k, 0.0);
        let b = stability_constant_coeffs(phi.fourier(), k);
        assert!((a - b).abs() <= 1e-10 * b);
    }

    let flat = solve_mckean_vlasov(&kuramoto(grid, 1.0).unwrap(), &InitialCondition::uniform(grid), &cfg).unwrap();
    assert!(stability_constant(&flat, 2, 0.1).is_infinite());
}

/// Short-time instance: φ = laplace(1), fine time mesh so that `[0, t₀]`
/// contains several frames.
fn short_time_setup() -> (InitialCondition, mvinfer::SolverConfig) {
    let grid = reference_grid();
    (periodized_laplace(1, grid).unwrap(), mvinfer::SolverConfig::new(0.25, 4096, mvinfer::Scheme::Imex1))
}

#[test]
fn short_time_bound_on_kuramoto_instance() {
    let (phi, cfg) = short_time_setup();
    let grid = phi.grid();
    let w0 = kuramoto(grid, 1.0).unwrap();
    let rho0 = solve_mckean_vlasov(&w0, &phi, &cfg).unwrap();
    let p = phi.decon_params().unwrap();
    let c_lip = time_lipschitz_constant(&rho0);
    let t0 = short_time_t0(p.c, p.zeta, REFERENCE_K, c_lip);
    assert!(t0 >= 4.0 * cfg.step(), "t0 = {t0} is below four steps");

    let exact = short_time_recovery_bound(&w0, &w0, &rho0, &rho0, REFERENCE_K, t0, REFERENCE_ALPHA, p.zeta).unwrap();
    assert_eq!(exact.lhs, 0.0);
    assert!(exact.holds);

    let w = cosine_potential(&[([1, 0], -0.6), ([2, 0], 0.2)], grid).unwrap();
    let rho = solve_mckean_vlasov(&w, &phi, &cfg).unwrap();
    let r = short_time_recovery_bound(&w, &w0, &rho, &rho0, REFERENCE_K, t0, REFERENCE_ALPHA, p.zeta).unwrap();
    assert!(r.lhs > 0.0 && r.holds, "{r:?}");

    // W → W₀ along W₀ + s(W − W₀): the bound shrinks with the distance terms.
    let delta = w.sub(&w0).unwrap();
    let mut last = f64::INFINITY;
    for s in [1.0, 0.5, 0.25, 0.125] {
        let ws = Potential::from_fourier(
            {
                let mut c = w0.fourier().clone();
                for (a, b) in c.as_mut_slice().iter_mut().zip(delta.fourier().as_slice()) {
                    *a += b * s;
                }
                c
            },
            Some(REFERENCE_K),
            format!("path:{s}"),
        )
        .unwrap();
        let rs = solve_mckean_vlasov(&ws, &phi, &cfg).unwrap();
        let rep = short_time_recovery_bound(&ws, &w0, &rs, &rho0, REFERENCE_K, t0, REFERENCE_ALPHA, p.zeta).unwrap();
        assert!(rep.holds, "{rep:?}");
        assert!(rep.rhs < last, "rhs {} not below {last}", rep.rhs);
        last = rep.rhs;
    }
}

#[test]
fn short_time_mode_persistence() {
    let (phi, cfg) = short_time_setup();
    let grid = phi.grid();
    let p = phi.decon_params().unwrap();
    for w in [kuramoto(grid, 1.0).unwrap(), kuramoto(grid, 0.5).unwrap(), Potential::zero(grid)] {
        let rho = solve_mckean_vlasov(&w, &phi, &cfg).unwrap();
        let c_lip = time_lipschitz_constant(&rho);
        for k in 1..=3 {
            let t0 = short_time_t0(p.c, p.zeta, k, c_lip);
            let rep = mode_persistence(&rho, k, t0, c_lip);
            assert!(rep.frames >= 2, "{rep:?}");
            assert!(rep.holds, "{rep:?}");
        }
    }
}

#[test]
fn jsonl_log_appends_one_object_per_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("diag.jsonl");
    let r = InequalityReport::new("x", 1.0, 2.0, serde_json::json!({"a": 1}));
    append_jsonl(&path, &[r.clone(), r.clone()]).unwrap();
    append_jsonl(&path, &[r]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(v["ratio"], 0.5);
    assert_eq!(v["holds"], true);
}
