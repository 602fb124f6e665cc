//! Synthetic markets and past observations, bid recovery from cleared
//! outcomes, and a baseline bidder that best-responds to rivals' mean bids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::equilibrium::{best_response, nash_equilibrium, CostParams, GameInstance, NashOptions};
use crate::error::{Error, Result};
use crate::inverse::Observation;
use crate::market::{marginal_clearing, MarketConfig};

pub const ALPHA_BAR: f64 = 200.0;
pub const DEFAULT_P_MAX: f64 = 150.0;

/// Tolerance for equilibria written into datasets.
pub const DATA_NASH_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioRanges {
    pub demand_range: (f64, f64),
    pub fuel_range: (f64, f64),
}

impl Default for ScenarioRanges {
    fn default() -> Self {
        Self {
            demand_range: (50.0, 100.0),
            fuel_range: (10.0, 30.0),
        }
    }
}

impl ScenarioRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("demand", self.demand_range), ("fuel", self.fuel_range)] {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
                return Err(Error::domain(format!("{name} range [{lo}, {hi}] must satisfy 0 < lo < hi")));
            }
        }
        Ok(())
    }

    fn draw(&self, rng: &mut impl Rng) -> Scenario {
        Scenario {
            demand: rng.gen_range(self.demand_range.0..self.demand_range.1),
            fuel_price: rng.gen_range(self.fuel_range.0..self.fuel_range.1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub demand: f64,
    pub fuel_price: f64,
}

/// Named test instances (a), (b), (c): below, inside and above the training ranges.
pub const NAMED_INSTANCES: [(&str, Scenario); 3] = [
    ("a", Scenario { demand: 45.0, fuel_price: 8.0 }),
    ("b", Scenario { demand: 75.0, fuel_price: 20.0 }),
    ("c", Scenario { demand: 110.0, fuel_price: 35.0 }),
];

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub thetas: Vec<CostParams>,
    pub config: MarketConfig,
}

fn equispaced(from: f64, to: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| from + (to - from) * k as f64 / (n - 1) as f64).collect()
}

pub fn generate_market(n: usize) -> Result<GroundTruth> {
    if n < 2 {
        return Err(Error::domain(format!("need at least 2 suppliers, got {n}")));
    }
    let theta1 = equispaced(7.0, 5.0, n);
    let theta2 = equispaced(0.7, 0.9, n);
    let beta = equispaced(0.05, 0.07, n).into_iter().map(|c2| 2.0 * c2).collect();
    let config = MarketConfig::new(beta, vec![0.0; n], vec![DEFAULT_P_MAX; n], ALPHA_BAR)?;
    Ok(GroundTruth {
        thetas: theta1.into_iter().zip(theta2).map(|(a, b)| CostParams::new(a, b)).collect(),
        config,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    /// Relative perturbation uniform on `(-nu, nu)`.
    #[default]
    Uniform,
    /// Relative perturbation normal with sd `nu / 2`, rejected outside `(-nu, nu)`.
    TruncatedGaussian,
}

impl NoiseModel {
    fn sample(self, nu: f64, rng: &mut impl Rng) -> f64 {
        if nu == 0.0 {
            return 0.0;
        }
        match self {
            NoiseModel::Uniform => rng.gen_range(-nu..nu),
            NoiseModel::TruncatedGaussian => {
                let normal = Normal::new(0.0, nu / 2.0).expect("positive sd");
                loop {
                    let u: f64 = normal.sample(rng);
                    if u.abs() < nu {
                        return u;
                    }
                }
            }
        }
    }
}

/// Exact equilibrium bids with every supplier marginal.
pub fn equilibrium_bids(truth: &GroundTruth, scenario: Scenario) -> Result<Vec<f64>> {
    let inst = GameInstance::all_marginal(&truth.config, scenario.demand, scenario.fuel_price)?;
    let opts = NashOptions {
        tol: DATA_NASH_TOL,
        ..NashOptions::default()
    };
    Ok(nash_equilibrium(&truth.thetas, &inst, &opts)?.into_inner())
}

/// Past observations: equilibrium bids at random scenarios, perturbed by
/// relative noise of level `noise_level` and clamped to `[0, abar]`. Price and
/// dispatch come from clearing the perturbed bids.
pub fn generate_observations(
    truth: &GroundTruth,
    m: usize,
    ranges: &ScenarioRanges,
    noise_level: f64,
    noise: NoiseModel,
    seed: u64,
) -> Result<Vec<Observation>> {
    if m == 0 {
        return Err(Error::domain("observation count must be at least 1"));
    }
    if !(noise_level.is_finite() && noise_level >= 0.0) {
        return Err(Error::domain(format!("noise level {noise_level} must be non-negative")));
    }
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = truth.config.n_suppliers();
    let all: Vec<usize> = (0..n).collect();
    let abar = truth.config.alpha_bar();
    (0..m)
        .map(|_| {
            let scenario = ranges.draw(&mut rng);
            let exact = equilibrium_bids(truth, scenario)?;
            let bids: Vec<f64> = exact
                .iter()
                .map(|&a| (a * (1.0 + noise.sample(noise_level, &mut rng))).clamp(0.0, abar))
                .collect();
            let (price, dispatch) = marginal_clearing(&bids, &truth.config, &all, scenario.demand)?;
            Ok(Observation::all_marginal(scenario.demand, scenario.fuel_price, bids)?.with_outcome(price, dispatch))
        })
        .collect()
}

/// Fresh scenarios drawn from `ranges`.
pub fn generate_scenarios(ranges: &ScenarioRanges, m: usize, seed: u64) -> Result<Vec<Scenario>> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..m).map(|_| ranges.draw(&mut rng)).collect())
}

/// Bid intercept implied by a marginal supplier's cleared outcome.
pub fn recover_bids(price: f64, dispatch: f64, beta: f64) -> f64 {
    price - beta * dispatch
}

/// Like [`recover_bids`] but rejects dispatch on a capacity bound.
pub fn recover_bid_checked(price: f64, dispatch: f64, config: &MarketConfig, i: usize) -> Result<f64> {
    config.check_supplier(i)?;
    let (lo, hi) = (config.p_min()[i], config.p_max()[i]);
    // zero dispatch against a zero floor still reveals the bid
    let zero_floor = lo == 0.0 && dispatch == 0.0;
    if (dispatch <= lo || dispatch >= hi) && !zero_floor {
        return Err(Error::domain(format!(
            "supplier {i} dispatch {dispatch} is on a capacity bound; bid unidentifiable"
        )));
    }
    Ok(recover_bids(price, dispatch, config.beta()[i]))
}

/// Mean and variance of each supplier's historical bid.
#[derive(Clone, Debug, PartialEq)]
pub struct BidStatistics {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

pub fn bid_statistics(history: &[Observation], n: usize) -> Result<BidStatistics> {
    if history.is_empty() {
        return Err(Error::domain("bid history is empty"));
    }
    let m = history.len() as f64;
    let mut mean = vec![0.0; n];
    for obs in history {
        if obs.bids.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: obs.bids.len(),
            });
        }
        for (acc, &a) in mean.iter_mut().zip(&obs.bids) {
            *acc += a / m;
        }
    }
    let mut variance = vec![0.0; n];
    for obs in history {
        for k in 0..n {
            variance[k] += (obs.bids[k] - mean[k]).powi(2) / m;
        }
    }
    Ok(BidStatistics { mean, variance })
}

/// Best response of supplier `i` with rivals frozen at their historical mean
/// bids. The variance of the rivals' bids is not used.
pub fn wen_david_bid(
    history: &[Observation],
    config: &MarketConfig,
    i: usize,
    scenario: Scenario,
    theta_i: &CostParams,
) -> Result<f64> {
    config.check_supplier(i)?;
    let stats = bid_statistics(history, config.n_suppliers())?;
    let inst = GameInstance::all_marginal(config, scenario.demand, scenario.fuel_price)?;
    best_response(theta_i, &stats.mean, &inst, i)
}

/// Baseline bid vector: every supplier plays [`wen_david_bid`] with its own true costs.
pub fn wen_david_bids(history: &[Observation], truth: &GroundTruth, scenario: Scenario) -> Result<Vec<f64>> {
    let n = truth.config.n_suppliers();
    let stats = bid_statistics(history, n)?;
    let inst = GameInstance::all_marginal(&truth.config, scenario.demand, scenario.fuel_price)?;
    (0..n)
        .map(|i| best_response(&truth.thetas[i], &stats.mean, &inst, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn three_supplier_market() {
        let t = generate_market(3).unwrap();
        assert_eq!(t.thetas[0], CostParams::new(7.0, 0.7));
        assert_relative_eq!(t.thetas[1].theta1, 6.0, epsilon = 1e-12);
        assert_relative_eq!(t.thetas[1].theta2, 0.8, epsilon = 1e-12);
        assert_eq!(t.thetas[2], CostParams::new(5.0, 0.9));
        for (b, want) in t.config.beta().iter().zip([0.10, 0.12, 0.14]) {
            assert_relative_eq!(*b, want, epsilon = 1e-12);
        }
        assert_eq!(t.config.alpha_bar(), 200.0);
    }

    #[test]
    fn endpoints_and_five_suppliers() {
        let t = generate_market(2).unwrap();
        assert_eq!(t.thetas, vec![CostParams::new(7.0, 0.7), CostParams::new(5.0, 0.9)]);
        assert_relative_eq!(t.config.beta()[1], 0.14, epsilon = 1e-12);
        let t = generate_market(5).unwrap();
        let th1: Vec<f64> = t.thetas.iter().map(|c| c.theta1).collect();
        assert_eq!(th1, vec![7.0, 6.5, 6.0, 5.5, 5.0]);
        assert!(generate_market(1).is_err());
    }

    #[test]
    fn noisy_bids_within_band() {
        let t = generate_market(4).unwrap();
        let ranges = ScenarioRanges::default();
        let noisy = generate_observations(&t, 50, &ranges, 0.01, NoiseModel::Uniform, 3).unwrap();
        for obs in &noisy {
            let exact = equilibrium_bids(&t, Scenario { demand: obs.demand, fuel_price: obs.fuel_price }).unwrap();
            for (a, e) in obs.bids.iter().zip(&exact) {
                assert!((a - e).abs() <= 0.01 * e.abs() + 1e-12);
            }
            assert!((50.0..100.0).contains(&obs.demand));
            assert!((10.0..30.0).contains(&obs.fuel_price));
            obs.validate(&t.config, 1e-9).unwrap();
        }
        let gauss = generate_observations(&t, 50, &ranges, 0.01, NoiseModel::TruncatedGaussian, 3).unwrap();
        assert_ne!(gauss, noisy);
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let t = generate_market(3).unwrap();
        let r = ScenarioRanges::default();
        let a = generate_observations(&t, 20, &r, 0.02, NoiseModel::Uniform, 9).unwrap();
        let b = generate_observations(&t, 20, &r, 0.02, NoiseModel::Uniform, 9).unwrap();
        assert_eq!(a, b);
        let c = generate_observations(&t, 20, &r, 0.02, NoiseModel::Uniform, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn recover_bid_examples() {
        assert_relative_eq!(recover_bids(9.0560, 20.560, 0.10), 7.0, epsilon = 1e-3);
        assert_eq!(recover_bids(12.5, 0.0, 0.3), 12.5);
        let cfg = MarketConfig::new(vec![0.1], vec![0.0], vec![50.0], 200.0).unwrap();
        assert!(recover_bid_checked(20.0, 50.0, &cfg, 0).is_err());
        assert!(recover_bid_checked(20.0, 10.0, &cfg, 0).is_ok());
    }

    #[test]
    fn wen_david_against_constant_history() {
        let t = generate_market(3).unwrap();
        let obs = Observation::all_marginal(70.0, 15.0, vec![20.0, 22.0, 24.0]).unwrap();
        let history = vec![obs.clone(), obs.clone(), obs];
        let s = Scenario { demand: 80.0, fuel_price: 20.0 };
        let inst = GameInstance::all_marginal(&t.config, 80.0, 20.0).unwrap();
        for i in 0..3 {
            let got = wen_david_bid(&history, &t.config, i, s, &t.thetas[i]).unwrap();
            let want = best_response(&t.thetas[i], &[20.0, 22.0, 24.0], &inst, i).unwrap();
            assert_eq!(got, want);
        }
        let stats = bid_statistics(&history, 3).unwrap();
        assert_eq!(stats.variance, vec![0.0; 3]);
        assert!(wen_david_bid(&[], &t.config, 0, s, &t.thetas[0]).is_err());
    }
}
