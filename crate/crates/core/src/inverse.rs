//! Inverse optimization: recover supplier cost parameters from observed bids
//! by minimizing the worst per-observation duality gap of the bidding game.
//!
//! Gradient of supplier `i`'s profit at observation `j` is affine in its own
//! `theta_i`, so the problem is a linear program in `(t, y, theta)`:
//!
//! ```text
//! min t
//!   y_ij >= max(0, g_ij(theta))
//!   sum_i (abar * y_ij - alpha_ij * g_ij(theta)) <= t      for each j
//!   g_i,k_i(theta) = 0                                      for each i
//! ```

use serde::{Deserialize, Serialize};

use crate::equilibrium::{BetaHat, CostParams};
use crate::error::{Error, Result};
use crate::lp::{solve_lp_with, LpProblem, LpStatus, Sense, SimplexOptions};
use crate::market::{ClearingOutcome, MarketConfig};

/// One past market outcome. `bids` is indexed by supplier (length `N`);
/// only entries in `marginal_set` are used. `demand` is the demand served by
/// the marginal suppliers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub demand: f64,
    pub fuel_price: f64,
    pub bids: Vec<f64>,
    pub marginal_set: Vec<usize>,
    #[serde(default)]
    pub price: Option<f64>,
    #[serde(default)]
    pub dispatch: Option<Vec<f64>>,
}

impl Observation {
    pub fn new(demand: f64, fuel_price: f64, bids: Vec<f64>, mut marginal_set: Vec<usize>) -> Result<Self> {
        marginal_set.sort_unstable();
        marginal_set.dedup();
        let obs = Self {
            demand,
            fuel_price,
            bids,
            marginal_set,
            price: None,
            dispatch: None,
        };
        if obs.marginal_set.is_empty() {
            return Err(Error::EmptyMarginalSet);
        }
        if !(demand.is_finite() && demand > 0.0) {
            return Err(Error::domain(format!("observation demand {demand} must be positive")));
        }
        if !(fuel_price.is_finite() && fuel_price >= 0.0) {
            return Err(Error::domain(format!("fuel price {fuel_price} must be non-negative")));
        }
        Ok(obs)
    }

    /// Observation with every supplier marginal.
    pub fn all_marginal(demand: f64, fuel_price: f64, bids: Vec<f64>) -> Result<Self> {
        let n = bids.len();
        Self::new(demand, fuel_price, bids, (0..n).collect())
    }

    pub fn with_outcome(mut self, price: f64, dispatch: Vec<f64>) -> Self {
        self.price = Some(price);
        self.dispatch = Some(dispatch);
        self
    }

    pub fn is_marginal(&self, i: usize) -> bool {
        self.marginal_set.binary_search(&i).is_ok()
    }

    /// Checks bid range and, when price and dispatch are present,
    /// `alpha_i = R - beta_i P_i` within `tol` for marginal suppliers.
    pub fn validate(&self, config: &MarketConfig, tol: f64) -> Result<()> {
        config.check_bids(&self.bids)?;
        for &i in &self.marginal_set {
            config.check_supplier(i)?;
        }
        if let (Some(r), Some(p)) = (self.price, &self.dispatch) {
            if p.len() != config.n_suppliers() {
                return Err(Error::LengthMismatch {
                    expected: config.n_suppliers(),
                    got: p.len(),
                });
            }
            for &i in &self.marginal_set {
                let implied = r - config.beta()[i] * p[i];
                if (implied - self.bids[i]).abs() > tol * (1.0 + r.abs()) {
                    return Err(Error::domain(format!(
                        "bid {} of supplier {i} inconsistent with price {r} and dispatch {}",
                        self.bids[i], p[i]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Observations from an island-partitioned clearing, one per island.
pub fn island_observations(bids: &[f64], fuel_price: f64, outcomes: &[ClearingOutcome]) -> Result<Vec<Observation>> {
    outcomes
        .iter()
        .map(|out| {
            let mut dispatch = vec![0.0; bids.len()];
            for (&i, &p) in out.members.iter().zip(&out.dispatch) {
                dispatch[i] = p;
            }
            Ok(Observation::new(out.effective_demand, fuel_price, bids.to_vec(), out.marginal_set.clone())?
                .with_outcome(out.price, dispatch))
        })
        .collect()
}

/// Affine form of supplier `i`'s profit gradient at observation `obs`:
/// `g = constant + coef_theta1 * theta1 + coef_theta2 * theta2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientCoefficients {
    pub constant: f64,
    pub coef_theta1: f64,
    pub coef_theta2: f64,
}

impl GradientCoefficients {
    pub fn eval(&self, theta: &CostParams) -> f64 {
        self.constant + self.coef_theta1 * theta.theta1 + self.coef_theta2 * theta.theta2
    }
}

pub fn gradient_coefficients(obs: &Observation, config: &MarketConfig, i: usize) -> Result<GradientCoefficients> {
    config.check_supplier(i)?;
    if !obs.is_marginal(i) {
        return Err(Error::NotMarginal { supplier: i });
    }
    if obs.bids.len() != config.n_suppliers() {
        return Err(Error::LengthMismatch {
            expected: config.n_suppliers(),
            got: obs.bids.len(),
        });
    }
    let bh = BetaHat::new(config, &obs.marginal_set)?;
    Ok(coefficients_with(&bh, obs, config, i))
}

fn coefficients_with(bh: &BetaHat, obs: &Observation, config: &MarketConfig, i: usize) -> GradientCoefficients {
    let beta = config.beta()[i];
    let b = bh.beta_hat[i];
    let qi = bh.residual_term(config, &obs.marginal_set, &obs.bids, obs.demand, i);
    let alpha = obs.bids[i];
    let coef_theta1 = (1.0 - b) / beta;
    GradientCoefficients {
        constant: (b / beta) * qi + (alpha / beta) * (b * b - 1.0),
        coef_theta1,
        coef_theta2: coef_theta1 * obs.fuel_price,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaBounds {
    /// `theta1, theta2` in `[0, abar]`.
    #[default]
    Box,
    Free,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpForm {
    /// Scalar bound `t` on every gap row.
    #[default]
    MinT,
    /// Explicit `eps_j = gap_j` with `|eps_j| <= t`.
    AbsEpsilon,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Kelley cutting planes on `max_j gap_j(theta)` over theta only.
    #[default]
    CuttingPlane,
    /// The full LP in one simplex solve.
    Simplex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InverseOptions {
    pub theta_bounds: ThetaBounds,
    pub form: LpForm,
    pub strategy: Strategy,
    pub max_cut_rounds: usize,
    /// Relative gap at which cutting planes stop.
    pub cut_tol: f64,
    #[serde(skip)]
    pub simplex: SimplexOptions,
}

impl Default for InverseOptions {
    fn default() -> Self {
        Self {
            theta_bounds: ThetaBounds::Box,
            form: LpForm::MinT,
            strategy: Strategy::CuttingPlane,
            max_cut_rounds: 1000,
            cut_tol: 1e-10,
            simplex: SimplexOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub thetas: Vec<CostParams>,
    pub z: f64,
    pub normalization_obs: Vec<usize>,
}

/// Every observation's gradient coefficients, aligned with its marginal set.
struct Gradients {
    rows: Vec<Vec<(usize, GradientCoefficients)>>,
}

impl Gradients {
    fn new(training: &[Observation], config: &MarketConfig) -> Result<Self> {
        let rows = training
            .iter()
            .map(|obs| {
                if obs.bids.len() != config.n_suppliers() {
                    return Err(Error::LengthMismatch {
                        expected: config.n_suppliers(),
                        got: obs.bids.len(),
                    });
                }
                for &i in &obs.marginal_set {
                    config.check_supplier(i)?;
                }
                let bh = BetaHat::new(config, &obs.marginal_set)?;
                Ok(obs
                    .marginal_set
                    .iter()
                    .map(|&i| (i, coefficients_with(&bh, obs, config, i)))
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }
}

/// Checks that each supplier is marginal, alongside at least one rival, in two
/// observations with distinct fuel prices.
pub fn check_identifiable(training: &[Observation], n: usize) -> Result<()> {
    for i in 0..n {
        let mut fuels = training
            .iter()
            .filter(|o| o.marginal_set.len() >= 2 && o.is_marginal(i))
            .map(|o| o.fuel_price);
        let Some(first) = fuels.next() else {
            return Err(Error::Unidentifiable {
                supplier: i,
                reason: "never marginal alongside a rival".into(),
            });
        };
        if !fuels.any(|xi| xi != first) {
            return Err(Error::Unidentifiable {
                supplier: i,
                reason: "fewer than two marginal observations with distinct fuel prices".into(),
            });
        }
    }
    Ok(())
}

/// Normalization observation per supplier: the median by (demand, fuel
/// price, index) among observations where the supplier is marginal with a
/// rival. Suppliers marginal at the overall median share it.
pub fn normalization_indices(training: &[Observation], n: usize) -> Result<Vec<usize>> {
    let median_of = |mut idx: Vec<usize>| -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        idx.sort_by(|&a, &b| {
            let (oa, ob) = (&training[a], &training[b]);
            oa.demand
                .total_cmp(&ob.demand)
                .then(oa.fuel_price.total_cmp(&ob.fuel_price))
                .then(a.cmp(&b))
        });
        Some(idx[(idx.len() - 1) / 2])
    };
    let global = median_of((0..training.len()).collect()).ok_or_else(|| Error::domain("no training observations"))?;
    (0..n)
        .map(|i| {
            let usable = |o: &Observation| o.marginal_set.len() >= 2 && o.is_marginal(i);
            if usable(&training[global]) {
                return Ok(global);
            }
            let own = (0..training.len()).filter(|&j| usable(&training[j])).collect();
            median_of(own).ok_or_else(|| Error::Unidentifiable {
                supplier: i,
                reason: "never marginal alongside a rival".into(),
            })
        })
        .collect()
}

fn theta_bounds(config: &MarketConfig, bounds: ThetaBounds) -> (f64, f64) {
    match bounds {
        ThetaBounds::Box => (0.0, config.alpha_bar()),
        ThetaBounds::Free => (f64::NEG_INFINITY, f64::INFINITY),
    }
}

/// Index layout of the full LP.
#[derive(Clone, Debug)]
pub struct InverseLayout {
    pub t: usize,
    /// `y[j]` aligned with `training[j].marginal_set`.
    pub y: Vec<Vec<usize>>,
    /// `(theta1, theta2)` column per supplier.
    pub theta: Vec<(usize, usize)>,
    /// `eps_j` columns for [`LpForm::AbsEpsilon`].
    pub eps: Vec<usize>,
}

pub fn build_inverse_lp(
    training: &[Observation],
    config: &MarketConfig,
    normalization: &[usize],
    options: &InverseOptions,
) -> Result<(LpProblem, InverseLayout)> {
    let n = config.n_suppliers();
    if normalization.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: normalization.len(),
        });
    }
    check_identifiable(training, n)?;
    let grads = Gradients::new(training, config)?;
    build_with(training, config, normalization, options, &grads)
}

fn build_with(
    training: &[Observation],
    config: &MarketConfig,
    normalization: &[usize],
    options: &InverseOptions,
    grads: &Gradients,
) -> Result<(LpProblem, InverseLayout)> {
    let n = config.n_suppliers();
    let abar = config.alpha_bar();
    let mut lp = LpProblem::new();
    let t = lp.add_var("t", 1.0, 0.0, f64::INFINITY);
    let y: Vec<Vec<usize>> = training
        .iter()
        .enumerate()
        .map(|(j, obs)| {
            obs.marginal_set
                .iter()
                .map(|&i| lp.add_var(format!("y_{j}_{i}"), 0.0, 0.0, f64::INFINITY))
                .collect()
        })
        .collect();
    let (lo, hi) = theta_bounds(config, options.theta_bounds);
    let theta: Vec<(usize, usize)> = (0..n)
        .map(|i| {
            (
                lp.add_var(format!("theta1_{i}"), 0.0, lo, hi),
                lp.add_var(format!("theta2_{i}"), 0.0, lo, hi),
            )
        })
        .collect();

    // y_ij >= g_ij(theta)
    for (j, row) in grads.rows.iter().enumerate() {
        for (k, &(i, g)) in row.iter().enumerate() {
            lp.add_constraint(
                vec![(y[j][k], -1.0), (theta[i].0, g.coef_theta1), (theta[i].1, g.coef_theta2)],
                Sense::Le,
                -g.constant,
            );
        }
    }

    // gap rows
    let mut eps = Vec::new();
    for (j, row) in grads.rows.iter().enumerate() {
        let obs = &training[j];
        let mut coeffs = Vec::with_capacity(3 * row.len() + 1);
        let mut constant = 0.0;
        for (k, &(i, g)) in row.iter().enumerate() {
            let a = obs.bids[i];
            coeffs.push((y[j][k], abar));
            coeffs.push((theta[i].0, -a * g.coef_theta1));
            coeffs.push((theta[i].1, -a * g.coef_theta2));
            constant += a * g.constant;
        }
        match options.form {
            LpForm::MinT => {
                coeffs.push((t, -1.0));
                lp.add_constraint(coeffs, Sense::Le, constant);
            }
            LpForm::AbsEpsilon => {
                let e = lp.add_var(format!("eps_{j}"), 0.0, f64::NEG_INFINITY, f64::INFINITY);
                eps.push(e);
                coeffs.push((e, -1.0));
                lp.add_constraint(coeffs, Sense::Eq, constant);
                lp.add_constraint(vec![(e, 1.0), (t, -1.0)], Sense::Le, 0.0);
                lp.add_constraint(vec![(e, -1.0), (t, -1.0)], Sense::Le, 0.0);
            }
        }
    }

    // normalization
    for (i, &k) in normalization.iter().enumerate() {
        let g = grads
            .rows
            .get(k)
            .and_then(|row| row.iter().find(|(s, _)| *s == i))
            .map(|&(_, g)| g)
            .ok_or(Error::NotMarginal { supplier: i })?;
        lp.add_constraint(
            vec![(theta[i].0, g.coef_theta1), (theta[i].1, g.coef_theta2)],
            Sense::Eq,
            -g.constant,
        );
    }
    Ok((lp, InverseLayout { t, y, theta, eps }))
}

/// Largest duality gap over the training set at `thetas`, with the optimal
/// `y = max(0, g)`.
pub fn max_gap(training: &[Observation], config: &MarketConfig, thetas: &[CostParams]) -> Result<f64> {
    let grads = Gradients::new(training, config)?;
    Ok(gaps(&grads, training, config.alpha_bar(), thetas).into_iter().fold(0.0, f64::max))
}

fn gaps(grads: &Gradients, training: &[Observation], abar: f64, thetas: &[CostParams]) -> Vec<f64> {
    grads
        .rows
        .iter()
        .zip(training)
        .map(|(row, obs)| {
            row.iter()
                .map(|&(i, g)| {
                    let v = g.eval(&thetas[i]);
                    abar * v.max(0.0) - obs.bids[i] * v
                })
                .sum()
        })
        .collect()
}

pub fn estimate_costs(training: &[Observation], config: &MarketConfig, options: &InverseOptions) -> Result<CostEstimate> {
    let n = config.n_suppliers();
    check_identifiable(training, n)?;
    let normalization = normalization_indices(training, n)?;
    let grads = Gradients::new(training, config)?;
    let thetas = match options.strategy {
        Strategy::Simplex => solve_full(training, config, &normalization, options, &grads)?,
        Strategy::CuttingPlane => solve_cutting_plane(training, config, &normalization, options, &grads)?,
    };
    let gap = gaps(&grads, training, config.alpha_bar(), &thetas);
    let z = gap.iter().copied().fold(0.0, f64::max);
    debug_assert!(gap.iter().all(|&g| g >= -1e-7 * (1.0 + z)), "negative duality gap row");
    Ok(CostEstimate {
        thetas,
        z,
        normalization_obs: normalization,
    })
}

fn solve_full(
    training: &[Observation],
    config: &MarketConfig,
    normalization: &[usize],
    options: &InverseOptions,
    grads: &Gradients,
) -> Result<Vec<CostParams>> {
    let (lp, layout) = build_with(training, config, normalization, options, grads)?;
    let sol = solve_lp_with(&lp, &options.simplex);
    if sol.status != LpStatus::Optimal {
        return Err(Error::Lp(sol.status));
    }
    Ok(layout
        .theta
        .iter()
        .map(|&(a, b)| CostParams::new(sol.values[a], sol.values[b]))
        .collect())
}

/// Supplier `i`'s cost parameters restricted to its normalization line
/// `theta1 + xi_k theta2 = r`, parametrized by `s = theta2` in `[lo, hi]`.
#[derive(Clone, Copy, Debug)]
struct NormalLine {
    r: f64,
    xi: f64,
    lo: f64,
    hi: f64,
}

impl NormalLine {
    fn theta(&self, s: f64) -> CostParams {
        CostParams::new(self.r - self.xi * s, s)
    }
}

/// Minimizes `F(theta) = max_j gap_j(theta)` by Kelley's method.
///
/// The normalization rows pin each `theta_i` to a line, so the search is over
/// one scalar per supplier. Each gap is convex piecewise linear with one piece
/// per sign pattern of its gradients, so cuts are exact pieces and the method
/// ends at the LP optimum. The master `min t s.t. t >= cut_k(s), s in box` is
/// solved through its dual, which has one row per supplier plus one.
fn solve_cutting_plane(
    training: &[Observation],
    config: &MarketConfig,
    normalization: &[usize],
    options: &InverseOptions,
    grads: &Gradients,
) -> Result<Vec<CostParams>> {
    let n = config.n_suppliers();
    let abar = config.alpha_bar();
    let artificial = 1e3 * abar.max(1.0);

    let mut lines = Vec::with_capacity(n);
    for (i, &k) in normalization.iter().enumerate() {
        let g = grads.rows[k]
            .iter()
            .find(|(s, _)| *s == i)
            .map(|&(_, g)| g)
            .ok_or(Error::NotMarginal { supplier: i })?;
        if !(g.coef_theta1 > 0.0) {
            return Err(Error::Unidentifiable {
                supplier: i,
                reason: "normalization observation has no rival".into(),
            });
        }
        let r = -g.constant / g.coef_theta1;
        let xi = training[k].fuel_price;
        let (lo, hi) = match options.theta_bounds {
            ThetaBounds::Free => (-artificial, artificial),
            ThetaBounds::Box if xi > 0.0 => (((r - abar) / xi).max(0.0), (r / xi).min(abar)),
            ThetaBounds::Box if (0.0..=abar).contains(&r) => (0.0, abar),
            ThetaBounds::Box => (1.0, 0.0),
        };
        if lo > hi {
            return Err(Error::Lp(LpStatus::Infeasible));
        }
        lines.push(NormalLine { r, xi, lo, hi });
    }

    // g_ij(s_i) = a + b * s_i on each line
    let affine: Vec<Vec<(usize, f64, f64)>> = grads
        .rows
        .iter()
        .zip(training)
        .map(|(row, obs)| {
            row.iter()
                .map(|&(i, g)| {
                    let l = &lines[i];
                    (i, g.constant + g.coef_theta1 * l.r, g.coef_theta1 * (obs.fuel_price - l.xi))
                })
                .collect()
        })
        .collect();
    let gap_of = |j: usize, s: &[f64]| -> f64 {
        affine[j]
            .iter()
            .map(|&(i, a, b)| {
                let v = a + b * s[i];
                abar * v.max(0.0) - training[j].bids[i] * v
            })
            .sum()
    };

    // cut: t >= c + w . (s - lo)
    struct Cut {
        c: f64,
        w: Vec<(usize, f64)>,
    }
    let mut cuts: Vec<Cut> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut add_cut = |cuts: &mut Vec<Cut>, j: usize, s: &[f64]| -> bool {
        let pattern: Vec<bool> = affine[j].iter().map(|&(i, a, b)| a + b * s[i] >= 0.0).collect();
        if !seen.insert((j, pattern.clone())) {
            return false;
        }
        let mut c = 0.0;
        let mut w = Vec::with_capacity(pattern.len());
        for (&(i, a, b), &pos) in affine[j].iter().zip(&pattern) {
            let sigma = if pos { abar } else { 0.0 } - training[j].bids[i];
            c += sigma * (a + b * lines[i].lo);
            w.push((i, sigma * b));
        }
        cuts.push(Cut { c, w });
        true
    };

    let mut s: Vec<f64> = lines
        .iter()
        .map(|l| if options.theta_bounds == ThetaBounds::Free { l.lo.max(0.0).min(l.hi) } else { 0.5 * (l.lo + l.hi) })
        .collect();
    for j in 0..training.len() {
        add_cut(&mut cuts, j, &s);
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..options.max_cut_rounds {
        let mut dual = LpProblem::new();
        let lambda: Vec<usize> = (0..cuts.len())
            .map(|k| dual.add_var(format!("l{k}"), -cuts[k].c, 0.0, f64::INFINITY))
            .collect();
        let mu: Vec<usize> = lines
            .iter()
            .enumerate()
            .map(|(i, l)| dual.add_var(format!("m{i}"), l.hi - l.lo, 0.0, f64::INFINITY))
            .collect();
        dual.add_constraint(lambda.iter().map(|&v| (v, 1.0)).collect(), Sense::Eq, 1.0);
        let mut rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(mu[i], -1.0)]).collect();
        for (k, cut) in cuts.iter().enumerate() {
            for &(i, w) in &cut.w {
                if w != 0.0 {
                    rows[i].push((lambda[k], -w));
                }
            }
        }
        for row in rows {
            dual.add_constraint(row, Sense::Le, 0.0);
        }
        let sol = solve_lp_with(&dual, &options.simplex);
        if sol.status != LpStatus::Optimal {
            return Err(Error::Lp(sol.status));
        }
        let lower = -sol.duals[0];
        for (i, l) in lines.iter().enumerate() {
            s[i] = (l.lo - sol.duals[1 + i]).clamp(l.lo, l.hi);
        }
        let gaps: Vec<f64> = (0..training.len()).map(|j| gap_of(j, &s)).collect();
        let upper = gaps.iter().copied().fold(0.0, f64::max);
        if best.as_ref().is_none_or(|(b, _)| upper < *b) {
            best = Some((upper, s.clone()));
        }
        let incumbent = best.as_ref().map_or(upper, |(b, _)| *b);
        let tol = options.cut_tol * (1.0 + incumbent.abs());
        if incumbent - lower <= tol {
            break;
        }
        let mut added = false;
        for (j, &g) in gaps.iter().enumerate() {
            if g > lower + tol {
                added |= add_cut(&mut cuts, j, &s);
            }
        }
        if !added {
            break;
        }
    }
    let (_, s) = best.expect("at least one master solved");
    if options.theta_bounds == ThetaBounds::Free && s.iter().any(|v| v.abs() >= artificial * (1.0 - 1e-9)) {
        return Err(Error::Lp(LpStatus::Unbounded));
    }
    Ok(lines.iter().zip(&s).map(|(l, &v)| l.theta(v)).collect())
}
