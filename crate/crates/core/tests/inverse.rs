use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfe_core::datagen::{generate_market, generate_observations, GroundTruth, NoiseModel, ScenarioRanges};
use sfe_core::equilibrium::{profit_gradient, CostParams, GameInstance};
use sfe_core::inverse::{
    build_inverse_lp, estimate_costs, gradient_coefficients, max_gap, normalization_indices, InverseOptions, LpForm,
    Observation, Strategy, ThetaBounds,
};
use sfe_core::lp::{solve_lp, LpStatus};
use sfe_core::market::MarketConfig;

fn data(n: usize, m: usize, nu: f64, seed: u64) -> (GroundTruth, Vec<Observation>) {
    let truth = generate_market(n).unwrap();
    let obs = generate_observations(&truth, m, &ScenarioRanges::default(), nu, NoiseModel::Uniform, seed).unwrap();
    (truth, obs)
}

fn with(strategy: Strategy, form: LpForm) -> InverseOptions {
    InverseOptions {
        strategy,
        form,
        ..InverseOptions::default()
    }
}

#[test]
fn clean_data_reveals_true_costs() {
    for n in [2, 3, 5] {
        let (truth, obs) = data(n, 60, 0.0, 11);
        for strategy in [Strategy::CuttingPlane, Strategy::Simplex] {
            let est = estimate_costs(&obs, &truth.config, &with(strategy, LpForm::MinT)).unwrap();
            // the monolithic simplex leaves a small residual on this degenerate LP
            let z_tol = if strategy == Strategy::CuttingPlane { 1e-6 } else { 1e-4 };
            assert!(est.z <= z_tol, "N={n} {strategy:?}: z = {}", est.z);
            for (h, t) in est.thetas.iter().zip(&truth.thetas) {
                assert_relative_eq!(h.theta1, t.theta1, epsilon = 1e-4);
                assert_relative_eq!(h.theta2, t.theta2, epsilon = 1e-4);
            }
        }
    }
}

#[test]
fn reference_market_recovery() {
    let (truth, obs) = data(3, 100, 0.0, 1);
    let est = estimate_costs(&obs, &truth.config, &InverseOptions::default()).unwrap();
    let want = [(7.0, 0.7), (6.0, 0.8), (5.0, 0.9)];
    for (h, (a, b)) in est.thetas.iter().zip(want) {
        assert_relative_eq!(h.theta1, a, epsilon = 1e-4);
        assert_relative_eq!(h.theta2, b, epsilon = 1e-4);
    }
}

#[test]
fn free_bounds_also_recover_clean_costs() {
    let (truth, obs) = data(3, 40, 0.0, 4);
    let opts = InverseOptions {
        theta_bounds: ThetaBounds::Free,
        ..InverseOptions::default()
    };
    let est = estimate_costs(&obs, &truth.config, &opts).unwrap();
    for (h, t) in est.thetas.iter().zip(&truth.thetas) {
        assert_relative_eq!(h.theta1, t.theta1, epsilon = 1e-4);
    }
}

#[test]
fn duplicating_observations_keeps_the_estimate() {
    let (truth, obs) = data(3, 40, 0.01, 5);
    let once = estimate_costs(&obs, &truth.config, &InverseOptions::default()).unwrap();
    let twice: Vec<Observation> = obs.iter().chain(&obs).cloned().collect();
    let again = estimate_costs(&twice, &truth.config, &InverseOptions::default()).unwrap();
    assert_relative_eq!(once.z, again.z, max_relative = 1e-9);
    for (a, b) in once.thetas.iter().zip(&again.thetas) {
        assert_relative_eq!(a.theta1, b.theta1, epsilon = 1e-7);
        assert_relative_eq!(a.theta2, b.theta2, epsilon = 1e-7);
    }
}

#[test]
fn noisy_data_leaves_a_positive_gap() {
    let (truth, obs) = data(4, 100, 0.01, 6);
    let est = estimate_costs(&obs, &truth.config, &InverseOptions::default()).unwrap();
    assert!(est.z > 0.0);
    // the truth is feasible, so the optimum cannot be worse
    assert!(est.z <= max_gap(&obs, &truth.config, &truth.thetas).unwrap() + 1e-9);
}

#[test]
fn all_formulations_reach_the_same_optimum() {
    for (n, seed) in [(2, 1), (3, 2), (4, 3)] {
        let (truth, obs) = data(n, 30, 0.01, seed);
        let z: Vec<f64> = [
            with(Strategy::CuttingPlane, LpForm::MinT),
            with(Strategy::Simplex, LpForm::MinT),
            with(Strategy::Simplex, LpForm::AbsEpsilon),
        ]
        .iter()
        .map(|o| estimate_costs(&obs, &truth.config, o).unwrap().z)
        .collect();
        for v in &z[1..] {
            assert_relative_eq!(*v, z[0], max_relative = 1e-6);
        }
        // and the assembled LP's own objective agrees
        let norm = normalization_indices(&obs, n).unwrap();
        for form in [LpForm::MinT, LpForm::AbsEpsilon] {
            let (lp, _) = build_inverse_lp(&obs, &truth.config, &norm, &with(Strategy::Simplex, form)).unwrap();
            let sol = solve_lp(&lp);
            assert_eq!(sol.status, LpStatus::Optimal);
            assert_relative_eq!(sol.objective_value, z[0], max_relative = 1e-6);
        }
    }
}

#[test]
fn gap_rows_are_nonnegative_at_the_lp_optimum() {
    let (truth, obs) = data(3, 50, 0.02, 8);
    let norm = normalization_indices(&obs, 3).unwrap();
    let (lp, layout) = build_inverse_lp(&obs, &truth.config, &norm, &InverseOptions::default()).unwrap();
    let sol = solve_lp(&lp);
    assert!(sol.is_optimal());
    let x = &sol.values;
    let abar = truth.config.alpha_bar();
    for (j, o) in obs.iter().enumerate() {
        let mut gap = 0.0;
        for (k, &i) in o.marginal_set.iter().enumerate() {
            let g = gradient_coefficients(o, &truth.config, i).unwrap();
            let theta = CostParams::new(x[layout.theta[i].0], x[layout.theta[i].1]);
            gap += abar * x[layout.y[j][k]] - o.bids[i] * g.eval(&theta);
        }
        assert!(gap >= -1e-7, "row {j}: {gap}");
        assert!(gap <= x[layout.t] + 1e-7);
    }
    assert!(sol.objective_value >= -1e-9);
}

#[test]
fn lp_size_and_rows() {
    let (truth, obs) = data(10, 100, 0.01, 9);
    let norm = normalization_indices(&obs, 10).unwrap();
    let (lp, layout) = build_inverse_lp(&obs, &truth.config, &norm, &InverseOptions::default()).unwrap();
    assert_eq!(lp.n_vars(), 1 + 1000 + 20);
    // the y-row of (observation 0, supplier 2) carries its gradient coefficients
    let g = gradient_coefficients(&obs[0], &truth.config, 2).unwrap();
    let row = lp
        .constraints()
        .iter()
        .find(|c| c.coeffs.iter().any(|&(v, _)| v == layout.y[0][2]) && c.coeffs.len() == 3)
        .unwrap();
    assert!(row.coeffs.contains(&(layout.theta[2].0, g.coef_theta1)));
    assert!(row.coeffs.contains(&(layout.theta[2].1, g.coef_theta2)));
    assert_eq!(row.rhs, -g.constant);
}

#[test]
fn scaling_bids_keeps_the_lp_feasible() {
    let (truth, obs) = data(3, 30, 0.01, 10);
    for factor in [0.5, 2.0, 10.0] {
        let c = &truth.config;
        let config = MarketConfig::new(c.beta().to_vec(), c.p_min().to_vec(), c.p_max().to_vec(), c.alpha_bar() * factor)
            .unwrap();
        let scaled: Vec<Observation> = obs
            .iter()
            .map(|o| Observation::all_marginal(o.demand, o.fuel_price, o.bids.iter().map(|a| a * factor).collect()).unwrap())
            .collect();
        let est = estimate_costs(&scaled, &config, &InverseOptions::default());
        assert!(est.is_ok(), "factor {factor}: {est:?}");
    }
}

#[test]
fn reference_coefficients() {
    let config = MarketConfig::uncapacitated(vec![0.10, 0.12, 0.14], 200.0).unwrap();
    let obs = Observation::all_marginal(75.0, 20.0, vec![7.0, 6.0, 5.0]).unwrap();
    let g = gradient_coefficients(&obs, &config, 0).unwrap();
    assert_relative_eq!(g.coef_theta1, 6.0748, epsilon = 1e-4);
    assert_relative_eq!(g.coef_theta2 / g.coef_theta1, 20.0, max_relative = 1e-14);
}

#[test]
fn coefficients_reproduce_the_profit_gradient() {
    let (truth, obs) = data(4, 20, 0.01, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let o = &obs[rng.gen_range(0..obs.len())];
        let i = rng.gen_range(0..4);
        let theta = CostParams::new(rng.gen_range(0.0..20.0), rng.gen_range(0.0..3.0));
        let inst = GameInstance::new(&truth.config, o.demand, o.fuel_price, o.marginal_set.clone()).unwrap();
        let want = profit_gradient(&theta, &o.bids, &inst, i).unwrap();
        let got = gradient_coefficients(o, &truth.config, i).unwrap().eval(&theta);
        assert!((want - got).abs() <= 1e-10 * want.abs().max(1.0));
        let g = gradient_coefficients(o, &truth.config, i).unwrap();
        assert_relative_eq!(g.coef_theta2 / g.coef_theta1, o.fuel_price, max_relative = 1e-14);
    }
}

#[test]
fn unidentifiable_data_is_rejected() {
    let (truth, obs) = data(2, 10, 0.0, 13);
    let same_fuel: Vec<Observation> = obs
        .iter()
        .map(|o| Observation::all_marginal(o.demand, 20.0, o.bids.clone()).unwrap())
        .collect();
    assert!(estimate_costs(&same_fuel, &truth.config, &InverseOptions::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Any feasible point of the LP has every gap row nonnegative.
    #[test]
    fn weak_duality_at_feasible_points(
        seed in 0u64..1000,
        th in prop::collection::vec((0.0..200.0f64, 0.0..200.0f64), 3),
        slack in prop::collection::vec(0.0..5.0f64, 3),
    ) {
        let (truth, obs) = data(3, 5, 0.05, seed);
        let thetas: Vec<CostParams> = th.iter().map(|&(a, b)| CostParams::new(a, b)).collect();
        for o in &obs {
            let mut gap = 0.0;
            for &i in &o.marginal_set {
                let g = gradient_coefficients(o, &truth.config, i).unwrap().eval(&thetas[i]);
                let y = g.max(0.0) + slack[i];
                gap += truth.config.alpha_bar() * y - o.bids[i] * g;
            }
            prop_assert!(gap >= 0.0);
        }
    }
}
