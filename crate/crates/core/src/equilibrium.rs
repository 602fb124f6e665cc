//! Supplier profit under the bid-intercept game, its derivatives, the
//! closed-form best response and Nash equilibrium by best-response iteration.
//!
//! Only the intercepts of marginal suppliers are strategic; slopes are public.
//! With the marginal set `I` fixed, supplier `i`'s profit is a concave
//! quadratic in its own intercept.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{marginal_clearing, BidVector, MarketConfig};

/// Private cost coefficients: linear marginal cost `theta1 + theta2 * fuel_price`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub theta1: f64,
    pub theta2: f64,
}

impl CostParams {
    pub fn new(theta1: f64, theta2: f64) -> Self {
        Self { theta1, theta2 }
    }

    pub fn linear_cost(&self, fuel_price: f64) -> f64 {
        self.theta1 + self.theta2 * fuel_price
    }
}

/// One stage game: market data, effective demand, fuel price and the set of
/// suppliers that are marginal.
#[derive(Clone, Debug)]
pub struct GameInstance<'a> {
    pub config: &'a MarketConfig,
    pub demand: f64,
    pub fuel_price: f64,
    marginal_set: Vec<usize>,
}

impl<'a> GameInstance<'a> {
    pub fn new(config: &'a MarketConfig, demand: f64, fuel_price: f64, mut marginal_set: Vec<usize>) -> Result<Self> {
        if marginal_set.is_empty() {
            return Err(Error::EmptyMarginalSet);
        }
        marginal_set.sort_unstable();
        marginal_set.dedup();
        for &i in &marginal_set {
            config.check_supplier(i)?;
        }
        if !(demand.is_finite() && demand > 0.0) {
            return Err(Error::domain(format!("demand {demand} must be positive")));
        }
        if !(fuel_price.is_finite() && fuel_price >= 0.0) {
            return Err(Error::domain(format!("fuel price {fuel_price} must be non-negative")));
        }
        Ok(Self {
            config,
            demand,
            fuel_price,
            marginal_set,
        })
    }

    /// Instance in which every supplier is marginal.
    pub fn all_marginal(config: &'a MarketConfig, demand: f64, fuel_price: f64) -> Result<Self> {
        Self::new(config, demand, fuel_price, (0..config.n_suppliers()).collect())
    }

    pub fn marginal_set(&self) -> &[usize] {
        &self.marginal_set
    }

    fn check_marginal(&self, i: usize) -> Result<()> {
        self.config.check_supplier(i)?;
        if self.marginal_set.binary_search(&i).is_err() {
            return Err(Error::NotMarginal { supplier: i });
        }
        Ok(())
    }
}

/// Normalised inverse slopes of the marginal suppliers,
/// `beta_hat[i] = (1/beta[i]) / sum_{l in I} 1/beta[l]`.
#[derive(Clone, Debug)]
pub struct BetaHat {
    /// Indexed by supplier; zero outside the marginal set.
    pub beta_hat: Vec<f64>,
    pub inv_beta_sum: f64,
}

impl BetaHat {
    pub fn new(config: &MarketConfig, marginal_set: &[usize]) -> Result<Self> {
        if marginal_set.is_empty() {
            return Err(Error::EmptyMarginalSet);
        }
        let beta = config.beta();
        let inv_beta_sum: f64 = marginal_set.iter().map(|&i| 1.0 / beta[i]).sum();
        let mut beta_hat = vec![0.0; beta.len()];
        for &i in marginal_set {
            beta_hat[i] = (1.0 / beta[i]) / inv_beta_sum;
        }
        debug_assert!({
            let total: f64 = marginal_set.iter().map(|&i| beta_hat[i]).sum();
            (total - 1.0).abs() < 1e-12
                && (marginal_set.len() < 2
                    || marginal_set.iter().all(|&i| beta_hat[i] > 0.0 && beta_hat[i] < 1.0))
        });
        Ok(Self {
            beta_hat,
            inv_beta_sum,
        })
    }

    /// The rivals' aggregate term `Q_i = (Q + sum_{k in I, k != i} alpha_k / beta_k) / sum_l 1/beta_l`.
    pub fn residual_term(&self, config: &MarketConfig, marginal_set: &[usize], alpha: &[f64], demand: f64, i: usize) -> f64 {
        let beta = config.beta();
        let rivals: f64 = marginal_set
            .iter()
            .filter(|&&k| k != i)
            .map(|&k| alpha[k] / beta[k])
            .sum();
        (demand + rivals) / self.inv_beta_sum
    }
}

fn check_bid_len(bids: &[f64], config: &MarketConfig) -> Result<()> {
    if bids.len() != config.n_suppliers() {
        return Err(Error::LengthMismatch {
            expected: config.n_suppliers(),
            got: bids.len(),
        });
    }
    Ok(())
}

/// Profit of marginal supplier `i`: `(R - c_i) P_i - beta_i P_i^2 / 2`.
pub fn profit(theta: &CostParams, bids: &[f64], inst: &GameInstance<'_>, i: usize) -> Result<f64> {
    inst.check_marginal(i)?;
    check_bid_len(bids, inst.config)?;
    let (price, dispatch) = marginal_clearing(bids, inst.config, inst.marginal_set(), inst.demand)?;
    let k = inst.marginal_set().binary_search(&i).expect("checked marginal");
    let p = dispatch[k];
    let beta = inst.config.beta()[i];
    Ok((price - theta.linear_cost(inst.fuel_price)) * p - 0.5 * beta * p * p)
}

/// Sum of profits of all marginal suppliers.
pub fn total_profit(thetas: &[CostParams], bids: &[f64], inst: &GameInstance<'_>) -> Result<f64> {
    if thetas.len() != inst.config.n_suppliers() {
        return Err(Error::LengthMismatch {
            expected: inst.config.n_suppliers(),
            got: thetas.len(),
        });
    }
    check_bid_len(bids, inst.config)?;
    let (price, dispatch) = marginal_clearing(bids, inst.config, inst.marginal_set(), inst.demand)?;
    let beta = inst.config.beta();
    Ok(inst
        .marginal_set()
        .iter()
        .zip(&dispatch)
        .map(|(&i, &p)| (price - thetas[i].linear_cost(inst.fuel_price)) * p - 0.5 * beta[i] * p * p)
        .sum())
}

/// Derivative of supplier `i`'s profit with respect to its own intercept.
pub fn profit_gradient(theta: &CostParams, bids: &[f64], inst: &GameInstance<'_>, i: usize) -> Result<f64> {
    inst.check_marginal(i)?;
    check_bid_len(bids, inst.config)?;
    let bh = BetaHat::new(inst.config, inst.marginal_set())?;
    let q_i = bh.residual_term(inst.config, inst.marginal_set(), bids, inst.demand, i);
    let b = bh.beta_hat[i];
    let beta = inst.config.beta()[i];
    Ok((b * q_i + bids[i] * (b * b - 1.0) - (b - 1.0) * theta.linear_cost(inst.fuel_price)) / beta)
}

/// Second derivative of supplier `i`'s profit in its own intercept; constant
/// in the bids and strictly negative when two or more suppliers are marginal.
pub fn profit_hessian(inst: &GameInstance<'_>, i: usize) -> Result<f64> {
    inst.check_marginal(i)?;
    let bh = BetaHat::new(inst.config, inst.marginal_set())?;
    let b = bh.beta_hat[i];
    Ok((b - 1.0) * (b + 1.0) / inst.config.beta()[i])
}

fn best_response_from_residual(beta_hat: f64, q_i: f64, cost: f64, alpha_bar: f64) -> f64 {
    let interior = (beta_hat * q_i + (1.0 - beta_hat) * cost) / (1.0 - beta_hat * beta_hat);
    interior.clamp(0.0, alpha_bar)
}

/// Profit-maximising intercept of supplier `i` against the rivals' bids,
/// clamped to `[0, alpha_bar]`. A lone marginal supplier bids the cap.
pub fn best_response(theta: &CostParams, bids: &[f64], inst: &GameInstance<'_>, i: usize) -> Result<f64> {
    inst.check_marginal(i)?;
    check_bid_len(bids, inst.config)?;
    let alpha_bar = inst.config.alpha_bar();
    if inst.marginal_set().len() == 1 {
        return Ok(alpha_bar);
    }
    let bh = BetaHat::new(inst.config, inst.marginal_set())?;
    let q_i = bh.residual_term(inst.config, inst.marginal_set(), bids, inst.demand, i);
    Ok(best_response_from_residual(
        bh.beta_hat[i],
        q_i,
        theta.linear_cost(inst.fuel_price),
        alpha_bar,
    ))
}

#[derive(Clone, Debug)]
pub struct NashOptions {
    /// Bound on `max_i |alpha_i - best_response_i(alpha)|` at termination.
    pub tol: f64,
    pub max_rounds: usize,
    /// Starting bids; defaults to truthful bids clamped to `[0, alpha_bar]`.
    pub init: Option<Vec<f64>>,
}

impl Default for NashOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_rounds: 10_000,
            init: None,
        }
    }
}

/// Nash equilibrium of the intercept game by Gauss-Seidel best-response
/// sweeps over the marginal suppliers in index order.
///
/// Non-marginal suppliers keep their starting bids. The marginal set is held
/// fixed throughout.
pub fn nash_equilibrium(thetas: &[CostParams], inst: &GameInstance<'_>, opts: &NashOptions) -> Result<BidVector> {
    let config = inst.config;
    let n = config.n_suppliers();
    if thetas.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: thetas.len(),
        });
    }
    if !(opts.tol > 0.0) {
        return Err(Error::domain("equilibrium tolerance must be positive"));
    }
    let alpha_bar = config.alpha_bar();
    let xi = inst.fuel_price;
    let marginal = inst.marginal_set();
    let mut alpha = match &opts.init {
        Some(init) => {
            check_bid_len(init, config)?;
            init.clone()
        }
        None => thetas
            .iter()
            .map(|t| t.linear_cost(xi).clamp(0.0, alpha_bar))
            .collect(),
    };
    if marginal.len() == 1 {
        alpha[marginal[0]] = alpha_bar;
        return Ok(BidVector::new(alpha));
    }

    let beta = config.beta();
    let bh = BetaHat::new(config, marginal)?;
    let costs: Vec<f64> = thetas.iter().map(|t| t.linear_cost(xi)).collect();
    let mut weighted: f64 = marginal.iter().map(|&k| alpha[k] / beta[k]).sum();
    let response = |alpha_i: f64, weighted: f64, i: usize| {
        let q_i = (inst.demand + weighted - alpha_i / beta[i]) / bh.inv_beta_sum;
        best_response_from_residual(bh.beta_hat[i], q_i, costs[i], alpha_bar)
    };

    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_rounds {
        for &i in marginal {
            let next = response(alpha[i], weighted, i);
            weighted += (next - alpha[i]) / beta[i];
            alpha[i] = next;
        }
        // refresh the running sum to keep rounding drift out of the residual
        weighted = marginal.iter().map(|&k| alpha[k] / beta[k]).sum();
        residual = marginal
            .iter()
            .map(|&i| (alpha[i] - response(alpha[i], weighted, i)).abs())
            .fold(0.0, f64::max);
        if residual <= opts.tol {
            return Ok(BidVector::new(alpha));
        }
    }
    Err(Error::NotConverged {
        rounds: opts.max_rounds,
        residual,
        last: alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference_market() -> MarketConfig {
        MarketConfig::uncapacitated(vec![0.10, 0.12, 0.14], 200.0).unwrap()
    }

    fn reference_thetas() -> Vec<CostParams> {
        vec![
            CostParams::new(7.0, 0.7),
            CostParams::new(6.0, 0.8),
            CostParams::new(5.0, 0.9),
        ]
    }

    #[test]
    fn off_equilibrium_profit_of_reference_supplier() {
        let cfg = reference_market();
        let inst = GameInstance::all_marginal(&cfg, 75.0, 20.0).unwrap();
        let phi = profit(&reference_thetas()[0], &[7.0, 6.0, 5.0], &inst, 0).unwrap();
        // R = 9.056074766, P1 = 20.56074766, c = 21
        let (r, p) = (9.056_074_766_355_14, 20.560_747_663_551_4);
        assert_relative_eq!(phi, (r - 21.0) * p - 0.05 * p * p, epsilon = 1e-8);
        assert_relative_eq!(phi, -266.7, epsilon = 0.05);
    }

    #[test]
    fn zero_dispatch_gives_zero_profit() {
        let cfg = MarketConfig::uncapacitated(vec![0.1, 0.1], 200.0).unwrap();
        let inst = GameInstance::all_marginal(&cfg, 10.0, 0.0).unwrap();
        // R = (10 + 10a) / 20 for equal bids a: P_i = 5; pick bids so P_0 = 0
        // R = alpha_0 requires alpha_1 = alpha_0 - 0.1 * 10
        let bids = [11.0, 10.0];
        let (r, p) = marginal_clearing(&bids, &cfg, &[0, 1], 10.0).unwrap();
        assert_relative_eq!(r, 11.0, epsilon = 1e-12);
        assert_relative_eq!(p[0], 0.0, epsilon = 1e-12);
        let phi = profit(&CostParams::new(3.0, 0.2), &bids, &inst, 0).unwrap();
        assert_relative_eq!(phi, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn reference_hessian() {
        let cfg = reference_market();
        let inst = GameInstance::all_marginal(&cfg, 75.0, 20.0).unwrap();
        let s = 10.0 + 1.0 / 0.12 + 1.0 / 0.14;
        let b = 10.0 / s;
        assert_relative_eq!(b, 0.392_523_364_485_98, epsilon = 1e-12);
        let h = profit_hessian(&inst, 0).unwrap();
        assert_relative_eq!(h, -8.459_254_083_326_055, epsilon = 1e-9);
    }

    #[test]
    fn gradient_is_affine_in_theta() {
        let cfg = reference_market();
        let inst = GameInstance::all_marginal(&cfg, 75.0, 20.0).unwrap();
        let bids = [21.0, 22.0, 23.0];
        let bh = BetaHat::new(&cfg, inst.marginal_set()).unwrap();
        for i in 0..3 {
            let g0 = profit_gradient(&CostParams::new(0.0, 0.0), &bids, &inst, i).unwrap();
            let theta = CostParams::new(4.0, 0.3);
            let g = profit_gradient(&theta, &bids, &inst, i).unwrap();
            let slope = (1.0 - bh.beta_hat[i]) / cfg.beta()[i];
            assert_relative_eq!(g - g0, theta.theta1 * slope + theta.theta2 * 20.0 * slope, epsilon = 1e-9);
        }
    }

    #[test]
    fn gradient_vanishes_at_interior_best_response() {
        let cfg = reference_market();
        let inst = GameInstance::all_marginal(&cfg, 75.0, 20.0).unwrap();
        let thetas = reference_thetas();
        let mut bids = vec![20.0, 22.0, 24.0];
        for i in 0..3 {
            let br = best_response(&thetas[i], &bids, &inst, i).unwrap();
            assert!(br > 0.0 && br < 200.0);
            bids[i] = br;
            let g = profit_gradient(&thetas[i], &bids, &inst, i).unwrap();
            assert!(g.abs() <= 1e-9, "gradient {g}");
            bids[i] = 20.0 + 2.0 * i as f64;
        }
    }

    #[test]
    fn best_response_clamps_to_cap() {
        let cfg = reference_market();
        let inst = GameInstance::all_marginal(&cfg, 75.0, 20.0).unwrap();
        let br = best_response(&CostParams::new(1e6, 1e3), &[7.0, 6.0, 5.0], &inst, 1).unwrap();
        assert_eq!(br, 200.0);
        let br = best_response(&CostParams::new(-1e6, 0.0), &[7.0, 6.0, 5.0], &inst, 1).unwrap();
        assert_eq!(br, 0.0);
    }

    #[test]
    fn lone_marginal_supplier_bids_the_cap() {
        let cfg = reference_market();
        let inst = GameInstance::new(&cfg, 40.0, 20.0, vec![2]).unwrap();
        let br = best_response(&reference_thetas()[2], &[7.0, 6.0, 5.0], &inst, 2).unwrap();
        assert_eq!(br, 200.0);
        let eq = nash_equilibrium(&reference_thetas(), &inst, &NashOptions::default()).unwrap();
        assert_eq!(eq[2], 200.0);
    }

    #[test]
    fn non_marginal_supplier_is_rejected() {
        let cfg = reference_market();
        let inst = GameInstance::new(&cfg, 40.0, 20.0, vec![0, 2]).unwrap();
        let t = reference_thetas();
        assert!(matches!(profit(&t[1], &[7.0, 6.0, 5.0], &inst, 1), Err(Error::NotMarginal { supplier: 1 })));
        assert!(profit_gradient(&t[1], &[7.0, 6.0, 5.0], &inst, 1).is_err());
        assert!(profit_hessian(&inst, 1).is_err());
        assert!(best_response(&t[1], &[7.0, 6.0, 5.0], &inst, 1).is_err());
    }

    #[test]
    fn symmetric_market_has_symmetric_equilibrium() {
        let cfg = MarketConfig::uncapacitated(vec![0.12; 4], 200.0).unwrap();
        let inst = GameInstance::all_marginal(&cfg, 70.0, 15.0).unwrap();
        let thetas = vec![CostParams::new(6.0, 0.8); 4];
        let eq = nash_equilibrium(&thetas, &inst, &NashOptions::default()).unwrap();
        for i in 1..4 {
            assert_relative_eq!(eq[i], eq[0], epsilon = 1e-8);
        }
    }

    #[test]
    fn equilibrium_is_independent_of_start() {
        let cfg = reference_market();
        let inst = GameInstance::all_marginal(&cfg, 75.0, 20.0).unwrap();
        let thetas = reference_thetas();
        let low = nash_equilibrium(&thetas, &inst, &NashOptions { init: Some(vec![0.0; 3]), ..Default::default() }).unwrap();
        let high = nash_equilibrium(&thetas, &inst, &NashOptions { init: Some(vec![200.0; 3]), ..Default::default() }).unwrap();
        for i in 0..3 {
            assert!((low[i] - high[i]).abs() <= 1e-6);
        }
    }

    #[test]
    fn non_convergence_reports_last_iterate() {
        let cfg = reference_market();
        let inst = GameInstance::all_marginal(&cfg, 75.0, 20.0).unwrap();
        let opts = NashOptions { tol: 1e-14, max_rounds: 1, init: Some(vec![0.0; 3]) };
        match nash_equilibrium(&reference_thetas(), &inst, &opts) {
            Err(Error::NotConverged { rounds, residual, last }) => {
                assert_eq!(rounds, 1);
                assert!(residual > 0.0);
                assert_eq!(last.len(), 3);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
