use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfe_core::datagen::{generate_market, generate_observations, NoiseModel, ScenarioRanges};
use sfe_core::equilibrium::{profit_gradient, CostParams, GameInstance};
use sfe_core::learning::{
    coupled_modulus, discrepancy, eta_bound, mape, monotonicity_gamma, random_search, spearman, split_indices,
    tau_threshold, termination_bound, training_size, SearchConfig,
};
use sfe_core::market::MarketConfig;

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

#[test]
fn eta_small_cases() {
    assert_relative_eq!(eta_bound(3, 0.5, 1).unwrap(), 0.875, epsilon = 1e-15);
    assert!(eta_bound(50, 1e-9, 2).unwrap() > 1.0 - 1e-6);
    assert!(eta_bound(4, 0.5, 2).is_err());
    assert!(eta_bound(10, 0.0, 1).is_err());
}

#[test]
fn eta_matches_direct_binomial_sum() {
    fn choose(m: u64, k: u64) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64)
    }
    for (m, delta, n) in [(20u64, 0.1f64, 2usize), (39, 0.1, 2), (41, 0.1, 2), (60, 0.05, 3), (140, 0.2, 5)] {
        let direct: f64 = (0..=2 * n as u64)
            .map(|i| choose(m, i) * delta.powi(i as i32) * (1.0 - delta).powi((m - i) as i32))
            .sum();
        assert_relative_eq!(eta_bound(m as usize, delta, n).unwrap(), direct, max_relative = 1e-10);
    }
}

#[test]
fn eta_decreases_with_training_size() {
    for (n, delta) in [(2, 0.05), (5, 0.05), (10, 0.1)] {
        let start = (2 * n) as f64 / delta;
        let grid: Vec<usize> = (0..40).map(|k| start as usize + 10 * k).collect();
        let etas: Vec<f64> = grid.iter().map(|&m| eta_bound(m, delta, n).unwrap()).collect();
        for w in etas.windows(2) {
            assert!(w[1] <= w[0], "{etas:?}");
        }
        assert!(etas.last().unwrap() < etas.first().unwrap());
    }
}

#[test]
fn eta_near_one_is_monotone() {
    // the lower sum is within ulps of one here; rounding must not reorder it
    assert_eq!(eta_bound(21, 0.05, 10).unwrap(), 1.0);
    let etas: Vec<f64> = (21..400).map(|m| eta_bound(m, 0.05, 10).unwrap()).collect();
    for w in etas.windows(2) {
        assert!(w[1] <= w[0]);
    }
}

#[test]
fn termination_examples() {
    assert_eq!(termination_bound(0.5, 0.5).unwrap(), 1);
    assert_eq!(termination_bound(0.9, 0.01).unwrap(), 44);
    for k in 1..30 {
        assert_eq!(termination_bound(0.7, 0.7f64.powi(k)).unwrap(), k as u64);
    }
}

#[test]
fn gamma_for_the_reference_market() {
    let beta = [0.10, 0.12, 0.14];
    let s: f64 = beta.iter().map(|b| 1.0 / b).sum();
    let ratios: Vec<f64> = beta
        .iter()
        .map(|b| {
            let bh = 1.0 / b / s;
            (1.0 - bh * bh) / b
        })
        .collect();
    assert_relative_eq!(ratios[0], 8.4593, epsilon = 1e-3);
    assert_relative_eq!(ratios[1], 7.4415, epsilon = 1e-3);
    assert_relative_eq!(ratios[2], 6.5814, epsilon = 1e-3);
    let config = MarketConfig::uncapacitated(beta.to_vec(), 200.0).unwrap();
    assert_relative_eq!(monotonicity_gamma(&config, &all(3)).unwrap(), ratios[2], max_relative = 1e-14);

    let sym = MarketConfig::uncapacitated(vec![0.2; 3], 200.0).unwrap();
    assert_relative_eq!(monotonicity_gamma(&sym, &all(3)).unwrap(), (1.0 - 1.0 / 9.0) / 0.2, max_relative = 1e-14);
}

#[test]
fn tau_scales_with_the_root_of_eps_bar() {
    let t1 = tau_threshold(1e-4, 5, 6.9).unwrap();
    let t4 = tau_threshold(4e-4, 5, 6.9).unwrap();
    assert_relative_eq!(t4, 2.0 * t1, max_relative = 1e-14);
}

#[test]
fn coupled_modulus_bounds_the_gradient_map() {
    // f = -(stacked own-bid gradients); its modulus must hold for every pair.
    for n in [2, 3, 5, 10] {
        let truth = generate_market(n).unwrap();
        let inst = GameInstance::all_marginal(&truth.config, 75.0, 20.0).unwrap();
        let mu = coupled_modulus(&truth.config, &all(n)).unwrap();
        assert!(mu > 0.0);
        let f = |a: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| -profit_gradient(&truth.thetas[i], a, &inst, i).unwrap())
                .collect()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let mut tightest = f64::INFINITY;
        for _ in 0..1000 {
            let a1: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..200.0)).collect();
            let a2: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..200.0)).collect();
            let (f1, f2) = (f(&a1), f(&a2));
            let lhs: f64 = (0..n).map(|i| (f1[i] - f2[i]) * (a1[i] - a2[i])).sum();
            let d2: f64 = (0..n).map(|i| (a1[i] - a2[i]).powi(2)).sum();
            assert!(lhs >= mu * d2 * (1.0 - 1e-12));
            tightest = tightest.min(lhs / d2);
        }
        // no draw falls below the modulus
        assert!(tightest >= mu);
    }
}

#[test]
fn discrepancy_and_mape_identities() {
    let a = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]];
    let b = vec![vec![1.5, 2.0, 2.0], vec![4.0, 6.0, 6.0], vec![9.0, 8.0, 9.5]];
    let d = discrepancy(&a, &b, 3).unwrap();
    assert_relative_eq!(d, (1.5 / 3.0 + 1.0 / 3.0 + 2.5 / 3.0) / 3.0, epsilon = 1e-15);
    let (ra, rb): (Vec<_>, Vec<_>) = (a.iter().rev().cloned().collect(), b.iter().rev().cloned().collect());
    assert_relative_eq!(discrepancy(&ra, &rb, 3).unwrap(), d, epsilon = 1e-15);
    assert_eq!(discrepancy(&a, &a, 3).unwrap(), 0.0);

    let t = [CostParams::new(10.0, 1.0)];
    assert_relative_eq!(mape(&t, &[CostParams::new(11.0, 0.9)]).unwrap(), 10.0, epsilon = 1e-12);
    let truth = [CostParams::new(7.0, 0.7), CostParams::new(5.0, 0.9)];
    let err = [CostParams::new(7.3, 0.68), CostParams::new(4.9, 0.95)];
    let doubled: Vec<CostParams> = truth
        .iter()
        .zip(&err)
        .map(|(t, e)| CostParams::new(2.0 * e.theta1 - t.theta1, 2.0 * e.theta2 - t.theta2))
        .collect();
    assert_relative_eq!(
        mape(&truth, &doubled).unwrap(),
        2.0 * mape(&truth, &err).unwrap(),
        max_relative = 1e-12
    );
}

#[test]
fn spearman_examples() {
    assert_relative_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 35.0, 90.0]).unwrap(), 1.0, epsilon = 1e-15);
    assert_relative_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0, epsilon = 1e-15);
    // ties take average ranks
    let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!(r > 0.9 && r < 1.0);
}

fn dataset(n: usize, m: usize, nu: f64, seed: u64) -> (sfe_core::datagen::GroundTruth, Vec<sfe_core::inverse::Observation>) {
    let truth = generate_market(n).unwrap();
    let obs = generate_observations(&truth, m, &ScenarioRanges::default(), nu, NoiseModel::Uniform, seed).unwrap();
    (truth, obs)
}

#[test]
fn clean_search_stops_almost_at_once() {
    let (truth, obs) = dataset(3, 200, 0.0, 21);
    let sc = SearchConfig::default();
    let res = random_search(&obs, &truth.config, &sc, Some(&truth.thetas)).unwrap();
    assert!(res.iterations_run <= 2);
    assert!(mape(&truth.thetas, &res.best_thetas).unwrap() < 1e-4);
}

#[test]
fn search_is_reproducible_and_worker_independent() {
    let (truth, obs) = dataset(3, 60, 0.02, 22);
    let sc = SearchConfig {
        max_iter: 40,
        master_seed: 9,
        ..SearchConfig::default()
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| random_search(&obs, &truth.config, &sc, Some(&truth.thetas)).unwrap())
    };
    let first = run(1);
    assert_eq!(first, run(1));
    assert_eq!(first, run(4));
    let other = random_search(
        &obs,
        &truth.config,
        &SearchConfig {
            master_seed: 10,
            ..sc.clone()
        },
        None,
    )
    .unwrap();
    assert_ne!(first.log[0].train, other.log[0].train);
    assert!(other.log.iter().all(|e| e.mape.is_none() && e.validation_profit.is_none()));
}

#[test]
fn best_is_the_first_minimum_of_the_log() {
    let (truth, obs) = dataset(4, 80, 0.02, 23);
    let sc = SearchConfig {
        max_iter: 60,
        ..SearchConfig::default()
    };
    let res = random_search(&obs, &truth.config, &sc, Some(&truth.thetas)).unwrap();
    assert_eq!(res.log.len(), res.iterations_run);
    let mut running = f64::INFINITY;
    let mut best_iter = 0;
    for e in &res.log {
        if let Some(d) = e.discrepancy {
            if d < running {
                running = d;
                best_iter = e.iter;
            }
        }
    }
    assert_eq!(res.best_discrepancy, running);
    assert_eq!(res.best_iter, best_iter);
    let best = res.log.iter().find(|e| e.iter == best_iter).unwrap();
    assert_eq!(best.train, res.best_train);
}

#[test]
fn iteration_count_respects_the_termination_bound() {
    // Clean data, tau from eps_bar = 1e-9: count the runs needing more than T
    // iterations and compare with eta^T plus three standard errors.
    let n = 3;
    let (m, delta, epsilon) = (40, 0.2, 0.5);
    let m_t = training_size(m, 0.7);
    let truth = generate_market(n).unwrap();
    let gamma = monotonicity_gamma(&truth.config, &all(n)).unwrap();
    let eta = eta_bound(m_t, delta, n).unwrap();
    let t = termination_bound(eta, epsilon).unwrap();
    let p = eta.powi(t as i32);
    let runs = 100;
    let mut longer = 0;
    for seed in 0..runs {
        let obs = generate_observations(&truth, m, &ScenarioRanges::default(), 0.0, NoiseModel::Uniform, seed).unwrap();
        let sc = SearchConfig {
            tolerance: tau_threshold(1e-9, n, gamma).unwrap(),
            max_iter: 50,
            master_seed: seed,
            ..SearchConfig::default()
        };
        let res = random_search(&obs, &truth.config, &sc, None).unwrap();
        if res.iterations_run as u64 > t {
            longer += 1;
        }
    }
    let frac = longer as f64 / runs as f64;
    let sigma = (p * (1.0 - p) / runs as f64).sqrt();
    assert!(frac <= p + 3.0 * sigma, "fraction {frac} vs eta^T = {p} (T = {t})");
}

proptest! {
    #[test]
    fn splits_are_pure_sorted_subsets(seed in 0u64..1000, k in 1usize..500, m in 10usize..300) {
        let mt = training_size(m, 0.7);
        let s = split_indices(seed, k, m, mt);
        prop_assert_eq!(&s, &split_indices(seed, k, m, mt));
        prop_assert_eq!(s.len(), mt);
        prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(s.iter().all(|&j| j < m));
    }
}
