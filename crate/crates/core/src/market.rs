//! Uniform-price clearing of linear supply-function bids.
//!
//! Supplier `i` offers the marginal-cost curve `alpha[i] + beta[i] * P`
//! between `p_min[i]` and `p_max[i]`. The operator picks the single price `R`
//! at which the aggregate offered quantity meets the forecast demand. Suppliers
//! whose curve is clipped by a capacity bound at that price are reported in the
//! at-min / at-max sets, the rest are marginal and share the residual demand.

use std::ops::Deref;

use crate::error::{Error, Result};

/// Absolute tolerance on price comparisons when classifying suppliers.
pub const PRICE_TOL: f64 = 1e-9;

/// Public game data: bid slopes, capacity bounds and the bid intercept cap.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketConfig {
    beta: Vec<f64>,
    p_min: Vec<f64>,
    p_max: Vec<f64>,
    alpha_bar: f64,
}

impl MarketConfig {
    pub fn new(beta: Vec<f64>, p_min: Vec<f64>, p_max: Vec<f64>, alpha_bar: f64) -> Result<Self> {
        let n = beta.len();
        if n == 0 {
            return Err(Error::domain("market needs at least one supplier"));
        }
        for (len, what) in [(p_min.len(), "p_min"), (p_max.len(), "p_max")] {
            if len != n {
                return Err(Error::domain(format!(
                    "{what} has {len} entries for {n} suppliers"
                )));
            }
        }
        if let Some(i) = beta.iter().position(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(Error::domain(format!(
                "beta[{i}] = {} must be positive and finite",
                beta[i]
            )));
        }
        for i in 0..n {
            if !(p_min[i] >= 0.0 && p_min[i] <= p_max[i]) || p_min[i].is_nan() || p_max[i].is_nan()
            {
                return Err(Error::domain(format!(
                    "capacity bounds of supplier {i} must satisfy 0 <= p_min <= p_max (got {}, {})",
                    p_min[i], p_max[i]
                )));
            }
        }
        if !(alpha_bar.is_finite() && alpha_bar > 0.0) {
            return Err(Error::domain(format!(
                "alpha_bar = {alpha_bar} must be positive and finite"
            )));
        }
        Ok(Self {
            beta,
            p_min,
            p_max,
            alpha_bar,
        })
    }

    /// Market without capacity limits (`p_min = 0`, `p_max = inf`).
    pub fn uncapacitated(beta: Vec<f64>, alpha_bar: f64) -> Result<Self> {
        let n = beta.len();
        Self::new(beta, vec![0.0; n], vec![f64::INFINITY; n], alpha_bar)
    }

    pub fn n_suppliers(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn p_min(&self) -> &[f64] {
        &self.p_min
    }

    pub fn p_max(&self) -> &[f64] {
        &self.p_max
    }

    pub fn alpha_bar(&self) -> f64 {
        self.alpha_bar
    }

    /// Total demand range the market can serve.
    pub fn feasible_demand(&self) -> (f64, f64) {
        (self.p_min.iter().sum(), self.p_max.iter().sum())
    }

    pub(crate) fn check_supplier(&self, i: usize) -> Result<()> {
        if i >= self.n_suppliers() {
            return Err(Error::SupplierOutOfRange {
                supplier: i,
                n: self.n_suppliers(),
            });
        }
        Ok(())
    }

    /// Validates a bid vector against this market: one intercept per
    /// supplier, each in `[0, alpha_bar]`.
    pub fn check_bids(&self, bids: &[f64]) -> Result<()> {
        if bids.len() != self.n_suppliers() {
            return Err(Error::LengthMismatch {
                expected: self.n_suppliers(),
                got: bids.len(),
            });
        }
        for (i, &a) in bids.iter().enumerate() {
            if !(0.0..=self.alpha_bar).contains(&a) {
                return Err(Error::domain(format!(
                    "bid intercept alpha[{i}] = {a} outside [0, {}]",
                    self.alpha_bar
                )));
            }
        }
        Ok(())
    }

    /// Restriction of the market to the given suppliers, in the given order.
    pub fn subset(&self, members: &[usize]) -> Result<Self> {
        for &i in members {
            self.check_supplier(i)?;
        }
        Self::new(
            members.iter().map(|&i| self.beta[i]).collect(),
            members.iter().map(|&i| self.p_min[i]).collect(),
            members.iter().map(|&i| self.p_max[i]).collect(),
            self.alpha_bar,
        )
    }
}

/// Bid intercepts, one per supplier ($/MWh).
#[derive(Clone, Debug, PartialEq)]
pub struct BidVector(Vec<f64>);

impl BidVector {
    pub fn new(alpha: Vec<f64>) -> Self {
        Self(alpha)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl Deref for BidVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for BidVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Result of clearing a market (or one price island).
#[derive(Clone, Debug, PartialEq)]
pub struct ClearingOutcome {
    pub price: f64,
    /// Suppliers covered by this outcome, in ascending order.
    pub members: Vec<usize>,
    /// Dispatch aligned with `members`.
    pub dispatch: Vec<f64>,
    pub marginal_set: Vec<usize>,
    pub at_max_set: Vec<usize>,
    pub at_min_set: Vec<usize>,
    /// Demand met by the marginal suppliers.
    pub effective_demand: f64,
    /// Set when every marginal supplier sits exactly on a capacity bound, i.e.
    /// the price is the breakpoint of the last supplier before the marginal
    /// set would have become empty.
    pub price_clamped: bool,
}

impl ClearingOutcome {
    pub fn dispatch_of(&self, supplier: usize) -> Option<f64> {
        self.members
            .binary_search(&supplier)
            .ok()
            .map(|k| self.dispatch[k])
    }

    pub fn total_dispatch(&self) -> f64 {
        self.dispatch.iter().sum()
    }
}

/// Disjoint groups of suppliers cleared as independent sub-markets, each with
/// its own residual demand.
#[derive(Clone, Debug, PartialEq)]
pub struct IslandPartition {
    islands: Vec<Vec<usize>>,
    island_demand: Vec<f64>,
}

impl IslandPartition {
    pub fn new(islands: Vec<Vec<usize>>, island_demand: Vec<f64>, n_suppliers: usize) -> Result<Self> {
        if islands.len() != island_demand.len() {
            return Err(Error::LengthMismatch {
                expected: islands.len(),
                got: island_demand.len(),
            });
        }
        let mut seen = vec![false; n_suppliers];
        let mut islands = islands;
        for island in islands.iter_mut() {
            for &i in island.iter() {
                if i >= n_suppliers {
                    return Err(Error::SupplierOutOfRange {
                        supplier: i,
                        n: n_suppliers,
                    });
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::domain(format!(
                        "supplier {i} appears in more than one island"
                    )));
                }
            }
            island.sort_unstable();
        }
        Ok(Self {
            islands,
            island_demand,
        })
    }

    /// The uncongested case: every supplier in one island.
    pub fn single(n_suppliers: usize, demand: f64) -> Self {
        Self {
            islands: vec![(0..n_suppliers).collect()],
            island_demand: vec![demand],
        }
    }

    pub fn islands(&self) -> &[Vec<usize>] {
        &self.islands
    }

    pub fn island_demand(&self) -> &[f64] {
        &self.island_demand
    }
}

/// Price and dispatch when exactly the suppliers in `marginal` share the
/// effective demand and no capacity bound binds.
///
/// `alpha` and `config` are indexed by global supplier id; the returned
/// dispatch is aligned with `marginal`.
pub fn marginal_clearing(
    alpha: &[f64],
    config: &MarketConfig,
    marginal: &[usize],
    effective_demand: f64,
) -> Result<(f64, Vec<f64>)> {
    if marginal.is_empty() {
        return Err(Error::EmptyMarginalSet);
    }
    if alpha.len() != config.n_suppliers() {
        return Err(Error::LengthMismatch {
            expected: config.n_suppliers(),
            got: alpha.len(),
        });
    }
    let beta = config.beta();
    let mut inv_sum = 0.0;
    let mut weighted = 0.0;
    for &i in marginal {
        config.check_supplier(i)?;
        inv_sum += 1.0 / beta[i];
        weighted += alpha[i] / beta[i];
    }
    let price = (effective_demand + weighted) / inv_sum;
    let dispatch = marginal.iter().map(|&i| (price - alpha[i]) / beta[i]).collect();
    Ok((price, dispatch))
}

fn offered_quantity(alpha: &[f64], config: &MarketConfig, price: f64) -> f64 {
    let (beta, lo, hi) = (config.beta(), config.p_min(), config.p_max());
    (0..alpha.len())
        .map(|i| ((price - alpha[i]) / beta[i]).clamp(lo[i], hi[i]))
        .sum()
}

/// Clears the market for the given bids and forecast demand, honouring the
/// capacity bounds of every supplier.
pub fn clear_market(bids: &[f64], config: &MarketConfig, q_forecast: f64) -> Result<ClearingOutcome> {
    if bids.len() != config.n_suppliers() {
        return Err(Error::LengthMismatch {
            expected: config.n_suppliers(),
            got: bids.len(),
        });
    }
    if bids.iter().any(|a| !a.is_finite()) {
        return Err(Error::domain("bid intercepts must be finite"));
    }
    let (q_lo, q_hi) = config.feasible_demand();
    let slack = 1e-9 * q_forecast.abs().max(1.0);
    if !q_forecast.is_finite() || q_forecast < q_lo - slack || q_forecast > q_hi + slack {
        return Err(Error::InfeasibleDemand {
            demand: q_forecast,
            min: q_lo,
            max: q_hi,
        });
    }
    let q = q_forecast.clamp(q_lo, q_hi);
    let (beta, p_min, p_max) = (config.beta(), config.p_min(), config.p_max());
    let n = bids.len();

    // The offered quantity is continuous and non-decreasing in the price and
    // piecewise linear between the supplier breakpoints, so the clearing price
    // is found by locating the segment that brackets the demand.
    let mut breakpoints: Vec<f64> = (0..n)
        .flat_map(|i| [bids[i] + beta[i] * p_min[i], bids[i] + beta[i] * p_max[i]])
        .filter(|b| b.is_finite())
        .collect();
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup();

    let mut price = None;
    let mut prev: Option<(f64, f64)> = None;
    for &b in &breakpoints {
        let s = offered_quantity(bids, config, b);
        if s >= q - slack {
            price = Some(match prev {
                _ if (s - q).abs() <= slack => b,
                Some((pb, ps)) => {
                    // interior of a sloped segment
                    let slope: f64 = (0..n)
                        .filter(|&i| {
                            bids[i] + beta[i] * p_min[i] <= pb + PRICE_TOL
                                && bids[i] + beta[i] * p_max[i] >= b - PRICE_TOL
                        })
                        .map(|i| 1.0 / beta[i])
                        .sum();
                    pb + (q - ps) / slope
                }
                None => b,
            });
            break;
        }
        prev = Some((b, s));
    }
    let price = match (price, prev) {
        (Some(p), _) => p,
        // demand above the last finite breakpoint: some supplier is uncapped
        (None, Some((pb, ps))) => {
            let slope: f64 = (0..n)
                .filter(|&i| p_max[i].is_infinite() && bids[i] + beta[i] * p_min[i] <= pb + PRICE_TOL)
                .map(|i| 1.0 / beta[i])
                .sum();
            if slope <= 0.0 {
                return Err(Error::Internal("no supplier can absorb residual demand".into()));
            }
            pb + (q - ps) / slope
        }
        (None, None) => return Err(Error::Internal("market has no breakpoints".into())),
    };

    let mut marginal = Vec::new();
    let mut at_max = Vec::new();
    let mut at_min = Vec::new();
    for i in 0..n {
        if price > bids[i] + beta[i] * p_max[i] + PRICE_TOL {
            at_max.push(i);
        } else if price < bids[i] + beta[i] * p_min[i] - PRICE_TOL {
            at_min.push(i);
        } else {
            marginal.push(i);
        }
    }
    assert!(
        !marginal.is_empty(),
        "clearing price {price} left the marginal set empty"
    );
    let effective_demand = q
        - at_min.iter().map(|&i| p_min[i]).sum::<f64>()
        - at_max.iter().map(|&i| p_max[i]).sum::<f64>();
    let (price, marginal_dispatch) = marginal_clearing(bids, config, &marginal, effective_demand)?;

    let mut dispatch = vec![0.0; n];
    for &i in &at_min {
        dispatch[i] = p_min[i];
    }
    for &i in &at_max {
        dispatch[i] = p_max[i];
    }
    for (&i, &p) in marginal.iter().zip(&marginal_dispatch) {
        dispatch[i] = p;
    }
    let price_clamped = marginal.iter().all(|&i| {
        let tol = 1e-9 * dispatch[i].abs().max(1.0);
        (dispatch[i] - p_max[i]).abs() <= tol || (dispatch[i] - p_min[i]).abs() <= tol
    });

    Ok(ClearingOutcome {
        price,
        members: (0..n).collect(),
        dispatch,
        marginal_set: marginal,
        at_max_set: at_max,
        at_min_set: at_min,
        effective_demand,
        price_clamped,
    })
}

/// Clears each price island as an independent sub-market.
pub fn clear_islands(
    bids: &[f64],
    config: &MarketConfig,
    partition: &IslandPartition,
) -> Result<Vec<ClearingOutcome>> {
    if bids.len() != config.n_suppliers() {
        return Err(Error::LengthMismatch {
            expected: config.n_suppliers(),
            got: bids.len(),
        });
    }
    partition
        .islands()
        .iter()
        .zip(partition.island_demand())
        .enumerate()
        .map(|(s, (members, &demand))| {
            if members.is_empty() {
                return Err(Error::domain(format!("island {s} has no marginal supplier")));
            }
            let sub_config = config.subset(members)?;
            let sub_bids: Vec<f64> = members.iter().map(|&i| bids[i]).collect();
            let local = clear_market(&sub_bids, &sub_config, demand)?;
            let relabel = |set: &[usize]| set.iter().map(|&k| members[k]).collect::<Vec<_>>();
            Ok(ClearingOutcome {
                price: local.price,
                members: members.clone(),
                dispatch: local.dispatch,
                marginal_set: relabel(&local.marginal_set),
                at_max_set: relabel(&local.at_max_set),
                at_min_set: relabel(&local.at_min_set),
                effective_demand: local.effective_demand,
                price_clamped: local.price_clamped,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn three_supplier() -> MarketConfig {
        MarketConfig::uncapacitated(vec![0.10, 0.12, 0.14], 200.0).unwrap()
    }

    #[test]
    fn symmetric_suppliers_split_demand_evenly() {
        let cfg = MarketConfig::uncapacitated(vec![0.2; 4], 200.0).unwrap();
        let alpha = [12.0; 4];
        let (r, p) = marginal_clearing(&alpha, &cfg, &[0, 1, 2, 3], 80.0).unwrap();
        assert_relative_eq!(r, 12.0 + 0.2 * 80.0 / 4.0, epsilon = 1e-12);
        for pi in p {
            assert_relative_eq!(pi, 20.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn three_supplier_reference_clearing() {
        let (r, p) = marginal_clearing(&[7.0, 6.0, 5.0], &three_supplier(), &[0, 1, 2], 75.0).unwrap();
        assert_relative_eq!(r, 9.056_074_766_355_14, epsilon = 1e-9);
        assert_relative_eq!(p[0], 20.560_747_663_551_4, epsilon = 1e-9);
        assert_relative_eq!(p[1], 25.467_289_719_626_166, epsilon = 1e-9);
        assert_relative_eq!(p[2], 28.971_962_616_822_427, epsilon = 1e-9);
        assert_relative_eq!(p.iter().sum::<f64>(), 75.0, epsilon = 1e-10);
    }

    #[test]
    fn single_marginal_supplier_takes_all_demand() {
        let (r, p) = marginal_clearing(&[7.0, 6.0, 5.0], &three_supplier(), &[1], 40.0).unwrap();
        assert_relative_eq!(r, 6.0 + 0.12 * 40.0, epsilon = 1e-12);
        assert_relative_eq!(p[0], 40.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_marginal_set_is_rejected() {
        assert!(matches!(
            marginal_clearing(&[7.0, 6.0, 5.0], &three_supplier(), &[], 40.0),
            Err(Error::EmptyMarginalSet)
        ));
    }

    #[test]
    fn uncapacitated_clearing_matches_marginal_formula() {
        let alpha = [7.0, 6.0, 5.0];
        let out = clear_market(&alpha, &three_supplier(), 75.0).unwrap();
        let (r, p) = marginal_clearing(&alpha, &three_supplier(), &[0, 1, 2], 75.0).unwrap();
        assert_eq!(out.marginal_set, vec![0, 1, 2]);
        assert!(out.at_max_set.is_empty() && out.at_min_set.is_empty());
        assert_relative_eq!(out.price, r, epsilon = 1e-12);
        for i in 0..3 {
            assert_relative_eq!(out.dispatch[i], p[i], epsilon = 1e-12);
        }
        assert!(!out.price_clamped);
    }

    #[test]
    fn capped_supplier_moves_to_at_max() {
        let cfg = MarketConfig::new(vec![0.1, 0.1], vec![0.0, 0.0], vec![30.0, 100.0], 200.0).unwrap();
        let out = clear_market(&[5.0, 20.0], &cfg, 50.0).unwrap();
        assert_eq!(out.at_max_set, vec![0]);
        assert_eq!(out.marginal_set, vec![1]);
        assert!(out.at_min_set.is_empty());
        assert_relative_eq!(out.price, 22.0, epsilon = 1e-12);
        assert_relative_eq!(out.dispatch[0], 30.0, epsilon = 1e-12);
        assert_relative_eq!(out.dispatch[1], 20.0, epsilon = 1e-12);
        assert_relative_eq!(out.effective_demand, 20.0, epsilon = 1e-12);
    }

    #[test]
    fn demand_at_total_capacity_is_clamped_to_last_breakpoint() {
        let cfg = MarketConfig::new(vec![0.1, 0.1], vec![0.0, 0.0], vec![30.0, 100.0], 200.0).unwrap();
        let out = clear_market(&[5.0, 20.0], &cfg, 130.0).unwrap();
        // supplier 1's cap breakpoint (30) sets the price
        assert_relative_eq!(out.price, 30.0, epsilon = 1e-12);
        assert_eq!(out.at_max_set, vec![0]);
        assert_eq!(out.marginal_set, vec![1]);
        assert!(out.price_clamped);
        assert_relative_eq!(out.total_dispatch(), 130.0, epsilon = 1e-9);
    }

    #[test]
    fn demand_on_flat_segment_takes_lowest_price() {
        let cfg = MarketConfig::new(vec![0.1, 0.1], vec![0.0, 0.0], vec![30.0, 100.0], 200.0).unwrap();
        let out = clear_market(&[5.0, 20.0], &cfg, 30.0).unwrap();
        assert_relative_eq!(out.price, 8.0, epsilon = 1e-12);
        assert_eq!(out.marginal_set, vec![0]);
        assert_eq!(out.at_min_set, vec![1]);
        assert!(out.price_clamped);
    }

    #[test]
    fn infeasible_demand_is_rejected() {
        let cfg = MarketConfig::new(vec![0.1, 0.1], vec![5.0, 0.0], vec![30.0, 100.0], 200.0).unwrap();
        assert!(matches!(
            clear_market(&[5.0, 20.0], &cfg, 131.0),
            Err(Error::InfeasibleDemand { .. })
        ));
        assert!(matches!(
            clear_market(&[5.0, 20.0], &cfg, 4.0),
            Err(Error::InfeasibleDemand { .. })
        ));
    }

    #[test]
    fn single_island_equals_full_clearing() {
        let alpha = [7.0, 6.0, 5.0];
        let full = clear_market(&alpha, &three_supplier(), 75.0).unwrap();
        let islands = clear_islands(&alpha, &three_supplier(), &IslandPartition::single(3, 75.0)).unwrap();
        assert_eq!(islands.len(), 1);
        assert_eq!(islands[0], full);
    }

    #[test]
    fn singleton_islands_price_at_own_curve() {
        let alpha = [7.0, 6.0, 5.0];
        let part = IslandPartition::new(vec![vec![2], vec![0]], vec![30.0, 12.0], 3).unwrap();
        let out = clear_islands(&alpha, &three_supplier(), &part).unwrap();
        assert_relative_eq!(out[0].price, 5.0 + 0.14 * 30.0, epsilon = 1e-12);
        assert_relative_eq!(out[1].price, 7.0 + 0.10 * 12.0, epsilon = 1e-12);
        assert_eq!(out[0].marginal_set, vec![2]);
        assert_relative_eq!(out[1].dispatch_of(0).unwrap(), 12.0, epsilon = 1e-12);
    }

    #[test]
    fn two_supplier_island_of_reference_market() {
        let alpha = [7.0, 6.0, 5.0];
        let part = IslandPartition::new(vec![vec![0, 1]], vec![40.0], 3).unwrap();
        let out = clear_islands(&alpha, &three_supplier(), &part).unwrap();
        // (40 + 70 + 50) / (10 + 8.3333..)
        let expected = 160.0 / (10.0 + 1.0 / 0.12);
        assert_relative_eq!(out[0].price, expected, epsilon = 1e-12);
        assert_relative_eq!(out[0].total_dispatch(), 40.0, epsilon = 1e-10);
    }

    #[test]
    fn island_partition_validation() {
        assert!(IslandPartition::new(vec![vec![0, 1], vec![1]], vec![1.0, 1.0], 3).is_err());
        assert!(IslandPartition::new(vec![vec![0, 5]], vec![1.0], 3).is_err());
        assert!(IslandPartition::new(vec![vec![0]], vec![1.0, 2.0], 3).is_err());
        let empty = IslandPartition::new(vec![vec![]], vec![1.0], 3).unwrap();
        assert!(clear_islands(&[1.0, 2.0, 3.0], &three_supplier(), &empty).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(MarketConfig::uncapacitated(vec![0.1, 0.0], 200.0).is_err());
        assert!(MarketConfig::uncapacitated(vec![], 200.0).is_err());
        assert!(MarketConfig::uncapacitated(vec![0.1], 0.0).is_err());
        assert!(MarketConfig::new(vec![0.1], vec![5.0], vec![4.0], 200.0).is_err());
        assert!(MarketConfig::new(vec![0.1], vec![-1.0], vec![4.0], 200.0).is_err());
        let cfg = three_supplier();
        assert!(cfg.check_bids(&[1.0, 2.0]).is_err());
        assert!(cfg.check_bids(&[1.0, 2.0, 201.0]).is_err());
        assert!(cfg.check_bids(&[0.0, 2.0, 200.0]).is_ok());
    }
}
