//! Random search over training/validation splits, out-of-sample metrics and
//! the probabilistic termination bounds of the search.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{nash_equilibrium, total_profit, BetaHat, CostParams, GameInstance, NashOptions};
use crate::error::{Error, Result};
use crate::inverse::{estimate_costs, InverseOptions, Observation};
use crate::market::MarketConfig;

/// Equilibrium tolerance used when scoring candidate costs.
pub const VALIDATION_NASH_TOL: f64 = 1e-10;

/// Mean per-supplier l1 distance between observed and computed bids:
/// `(sum_j |alpha_j - alpha_hat_j|_1 / n) / m`.
pub fn discrepancy<A: AsRef<[f64]>, B: AsRef<[f64]>>(true_bids: &[A], computed: &[B], n: usize) -> Result<f64> {
    if true_bids.len() != computed.len() {
        return Err(Error::LengthMismatch {
            expected: true_bids.len(),
            got: computed.len(),
        });
    }
    if true_bids.is_empty() {
        return Err(Error::domain("discrepancy needs at least one observation"));
    }
    if n == 0 {
        return Err(Error::domain("supplier count must be positive"));
    }
    let mut total = 0.0;
    for (a, b) in true_bids.iter().zip(computed) {
        let (a, b) = (a.as_ref(), b.as_ref());
        if a.len() != b.len() {
            return Err(Error::LengthMismatch {
                expected: a.len(),
                got: b.len(),
            });
        }
        total += a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64;
    }
    Ok(total / true_bids.len() as f64)
}

/// Mean absolute percentage error of estimated cost parameters.
pub fn mape(theta_true: &[CostParams], theta_hat: &[CostParams]) -> Result<f64> {
    if theta_true.len() != theta_hat.len() {
        return Err(Error::LengthMismatch {
            expected: theta_true.len(),
            got: theta_hat.len(),
        });
    }
    if theta_true.is_empty() {
        return Err(Error::domain("no cost parameters"));
    }
    let mut total = 0.0;
    for (t, h) in theta_true.iter().zip(theta_hat) {
        for (a, b) in [(t.theta1, h.theta1), (t.theta2, h.theta2)] {
            if a == 0.0 {
                return Err(Error::domain("true cost parameter is zero; percentage error undefined"));
            }
            total += ((a - b) / a).abs();
        }
    }
    Ok(100.0 * total / (2 * theta_true.len()) as f64)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::domain("rank correlation needs two points"));
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean).powi(2);
        syy += (b - mean).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::domain("rank correlation undefined for constant input"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut end = k;
        while end + 1 < idx.len() && v[idx[end + 1]] == v[idx[k]] {
            end += 1;
        }
        let rank = (k + end) as f64 / 2.0 + 1.0;
        for &i in &idx[k..=end] {
            out[i] = rank;
        }
        k = end + 1;
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub train_fraction: f64,
    pub tolerance: f64,
    pub max_iter: usize,
    pub master_seed: u64,
    /// Record wall-clock seconds per iteration. Off by default so results
    /// are bitwise reproducible.
    pub record_timing: bool,
    pub inverse: InverseOptions,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            tolerance: 1e-3,
            max_iter: 10_000,
            master_seed: 0,
            record_timing: false,
            inverse: InverseOptions::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::domain(format!("train fraction {} must be in (0, 1)", self.train_fraction)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::domain(format!("tolerance {} must be positive", self.tolerance)));
        }
        if self.max_iter == 0 {
            return Err(Error::domain("max_iter must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iter: usize,
    pub z: Option<f64>,
    pub discrepancy: Option<f64>,
    pub mape: Option<f64>,
    /// Total profit over the validation set when suppliers play the computed
    /// equilibrium bids, evaluated with the true costs (absent without truth).
    pub validation_profit: Option<f64>,
    pub seconds: Option<f64>,
    pub train: Vec<usize>,
    pub error: Option<String>,
}

impl LogEntry {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_thetas: Vec<CostParams>,
    pub best_discrepancy: f64,
    pub best_iter: usize,
    pub best_train: Vec<usize>,
    pub iterations_run: usize,
    pub log: Vec<LogEntry>,
}

/// Training indices of iteration `k` (1-based): a pure function of the seed
/// and `k`.
pub fn split_indices(master_seed: u64, k: usize, m: usize, m_train: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(k as u64);
    let mut idx = sample(&mut rng, m, m_train).into_vec();
    idx.sort_unstable();
    idx
}

/// Training set size for `m` observations.
pub fn training_size(m: usize, train_fraction: f64) -> usize {
    (m as f64 * train_fraction).floor() as usize
}

/// Computed equilibrium bids for every observation under `thetas`, keeping
/// each observation's marginal set. Non-marginal bids are copied.
pub fn equilibrium_bids_for(
    observations: &[Observation],
    config: &MarketConfig,
    thetas: &[CostParams],
) -> Result<Vec<Vec<f64>>> {
    observations
        .iter()
        .map(|obs| {
            let inst = GameInstance::new(config, obs.demand, obs.fuel_price, obs.marginal_set.clone())?;
            let opts = NashOptions {
                tol: VALIDATION_NASH_TOL,
                init: Some(obs.bids.clone()),
                ..NashOptions::default()
            };
            Ok(nash_equilibrium(thetas, &inst, &opts)?.into_inner())
        })
        .collect()
}

struct Scored {
    thetas: Vec<CostParams>,
    entry: LogEntry,
}

fn run_iteration(
    dataset: &[Observation],
    config: &MarketConfig,
    sc: &SearchConfig,
    truth: Option<&[CostParams]>,
    k: usize,
    m_train: usize,
) -> Scored {
    let start = Instant::now();
    let train_idx = split_indices(sc.master_seed, k, dataset.len(), m_train);
    let mut entry = LogEntry {
        iter: k,
        z: None,
        discrepancy: None,
        mape: None,
        validation_profit: None,
        seconds: None,
        train: train_idx.clone(),
        error: None,
    };
    let outcome = (|| -> Result<(Vec<CostParams>, f64, f64, Option<f64>)> {
        let mut in_train = vec![false; dataset.len()];
        for &j in &train_idx {
            in_train[j] = true;
        }
        let training: Vec<Observation> = train_idx.iter().map(|&j| dataset[j].clone()).collect();
        let validation: Vec<&Observation> = dataset
            .iter()
            .zip(&in_train)
            .filter(|(_, &t)| !t)
            .map(|(o, _)| o)
            .collect();
        let est = estimate_costs(&training, config, &sc.inverse)?;
        let mut computed = Vec::with_capacity(validation.len());
        let mut profit = truth.map(|_| 0.0);
        for obs in &validation {
            let inst = GameInstance::new(config, obs.demand, obs.fuel_price, obs.marginal_set.clone())?;
            let opts = NashOptions {
                tol: VALIDATION_NASH_TOL,
                init: Some(obs.bids.clone()),
                ..NashOptions::default()
            };
            let bids = nash_equilibrium(&est.thetas, &inst, &opts)?.into_inner();
            if let (Some(acc), Some(t)) = (profit.as_mut(), truth) {
                *acc += total_profit(t, &bids, &inst)?;
            }
            computed.push(bids);
        }
        let observed: Vec<&[f64]> = validation.iter().map(|o| o.bids.as_slice()).collect();
        let d = discrepancy(&observed, &computed, config.n_suppliers())?;
        Ok((est.thetas, est.z, d, profit))
    })();
    let thetas = match outcome {
        Ok((thetas, z, d, profit)) => {
            entry.z = Some(z);
            entry.discrepancy = Some(d);
            entry.validation_profit = profit;
            entry.mape = truth.and_then(|t| mape(t, &thetas).ok());
            thetas
        }
        Err(e) => {
            entry.error = Some(e.to_string());
            Vec::new()
        }
    };
    if sc.record_timing {
        entry.seconds = Some(start.elapsed().as_secs_f64());
    }
    Scored { thetas, entry }
}

/// Repeatedly splits the data, estimates costs on the training part and
/// scores the implied equilibria on the rest; stops once a split scores
/// below the tolerance or after `max_iter` splits. Iterations run in
/// parallel batches on the current rayon pool; the result does not depend on
/// the number of workers.
pub fn random_search(
    dataset: &[Observation],
    config: &MarketConfig,
    sc: &SearchConfig,
    truth: Option<&[CostParams]>,
) -> Result<SearchResult> {
    sc.validate()?;
    let m = dataset.len();
    if m < 2 {
        return Err(Error::domain(format!("random search needs at least 2 observations, got {m}")));
    }
    let m_train = training_size(m, sc.train_fraction);
    if m_train == 0 || m_train >= m {
        return Err(Error::domain(format!(
            "train fraction {} leaves an empty training or validation set for {m} observations",
            sc.train_fraction
        )));
    }
    for obs in dataset {
        obs.validate(config, f64::INFINITY)?;
    }
    let batch = (rayon::current_num_threads() * 4).max(1);
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, Vec<CostParams>, Vec<usize>)> = None;
    let mut next = 1;
    'outer: while next <= sc.max_iter {
        let last = (next + batch - 1).min(sc.max_iter);
        let scored: Vec<Scored> = (next..=last)
            .into_par_iter()
            .map(|k| run_iteration(dataset, config, sc, truth, k, m_train))
            .collect();
        for s in scored {
            let k = s.entry.iter;
            let d = s.entry.discrepancy;
            if let Some(err) = &s.entry.error {
                log::debug!("iteration {k} failed: {err}");
            }
            let train = s.entry.train.clone();
            log.push(s.entry);
            if let Some(d) = d {
                if best.as_ref().is_none_or(|(b, ..)| d < *b) {
                    best = Some((d, k, s.thetas, train));
                }
                if d < sc.tolerance {
                    break 'outer;
                }
            }
        }
        next = last + 1;
    }
    let iterations_run = log.len();
    match best {
        Some((best_discrepancy, best_iter, best_thetas, best_train)) => Ok(SearchResult {
            best_thetas,
            best_discrepancy,
            best_iter,
            best_train,
            iterations_run,
            log,
        }),
        None => Err(Error::SearchFailed(
            log.into_iter()
                .map(|e| (e.iter, e.error.unwrap_or_default()))
                .collect(),
        )),
    }
}

/// `eta = sum_{i=0}^{2n} C(m_t, i) delta^i (1 - delta)^(m_t - i)`, summed in
/// log space. When most of the mass sits in those terms the upper tail is
/// summed instead and subtracted from one, which keeps values near one exact.
pub fn eta_bound(m_t: usize, delta: f64, n: usize) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta {delta} must be in (0, 1)")));
    }
    if m_t <= 2 * n {
        return Err(Error::domain(format!(
            "training size {m_t} must exceed 2N = {}; the bound is vacuous",
            2 * n
        )));
    }
    let (ld, l1d) = (delta.ln(), (-delta).ln_1p());
    let log_terms = |range: std::ops::RangeInclusive<usize>| -> f64 {
        let mut log_choose = 0.0;
        let mut terms = Vec::new();
        for i in 0..=*range.end() {
            if i > 0 {
                log_choose += ((m_t - i + 1) as f64).ln() - (i as f64).ln();
            }
            if i >= *range.start() {
                terms.push(log_choose + i as f64 * ld + (m_t - i) as f64 * l1d);
            }
        }
        let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        top.exp() * terms.iter().map(|t| (t - top).exp()).sum::<f64>()
    };
    let eta = if (2 * n) as f64 > m_t as f64 * delta {
        1.0 - log_terms(2 * n + 1..=m_t)
    } else {
        log_terms(0..=2 * n)
    };
    Ok(eta.clamp(0.0, 1.0))
}

/// Smallest `T` with `eta^T <= epsilon`, i.e. `ceil(log epsilon / log eta)`.
pub fn termination_bound(eta: f64, epsilon: f64) -> Result<u64> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::domain(format!("eta {eta} must be in (0, 1)")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::domain(format!("epsilon {epsilon} must be in (0, 1)")));
    }
    let ratio = epsilon.ln() / eta.ln();
    let nearest = ratio.round();
    let t = if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        ratio.ceil()
    };
    Ok(t.max(1.0) as u64)
}

/// `gamma = min_i (1 - beta_hat_i^2) / beta_i` over the marginal set.
pub fn monotonicity_gamma(config: &MarketConfig, marginal_set: &[usize]) -> Result<f64> {
    if marginal_set.len() < 2 {
        return Err(Error::domain("monotonicity constant needs at least two marginal suppliers"));
    }
    for &i in marginal_set {
        config.check_supplier(i)?;
    }
    let bh = BetaHat::new(config, marginal_set)?;
    Ok(marginal_set
        .iter()
        .map(|&i| (1.0 - bh.beta_hat[i].powi(2)) / config.beta()[i])
        .fold(f64::INFINITY, f64::min))
}

/// Discrepancy threshold `sqrt(eps_bar / (n gamma))`.
pub fn tau_threshold(eps_bar: f64, n: usize, gamma: f64) -> Result<f64> {
    if !(eps_bar > 0.0) || n == 0 || !(gamma > 0.0) {
        return Err(Error::domain("tau threshold needs eps_bar > 0, n > 0, gamma > 0"));
    }
    Ok((eps_bar / (n as f64 * gamma)).sqrt())
}

/// Jacobian of the stacked negative profit gradients `f(alpha)` over the
/// marginal set (rows and columns in marginal-set order). `f` is affine, so
/// this is constant.
pub fn negative_gradient_jacobian(config: &MarketConfig, marginal_set: &[usize]) -> Result<DMatrix<f64>> {
    let bh = BetaHat::new(config, marginal_set)?;
    let k = marginal_set.len();
    let beta = config.beta();
    Ok(DMatrix::from_fn(k, k, |r, c| {
        let (i, l) = (marginal_set[r], marginal_set[c]);
        if r == c {
            (1.0 - bh.beta_hat[i].powi(2)) / beta[i]
        } else {
            -bh.beta_hat[i] * bh.beta_hat[l] / beta[i]
        }
    }))
}

/// Strong-monotonicity modulus of `f` including the cross terms: the
/// smallest eigenvalue of the symmetric part of its Jacobian.
pub fn coupled_modulus(config: &MarketConfig, marginal_set: &[usize]) -> Result<f64> {
    let j = negative_gradient_jacobian(config, marginal_set)?;
    let sym = (&j + j.transpose()) * 0.5;
    Ok(sym.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryBounds {
    pub eta: f64,
    pub gamma: f64,
    pub tau_threshold: f64,
    pub termination_t: u64,
}

impl TheoryBounds {
    pub fn compute(
        config: &MarketConfig,
        marginal_set: &[usize],
        m_t: usize,
        delta: f64,
        epsilon: f64,
        eps_bar: f64,
    ) -> Result<Self> {
        let n = marginal_set.len();
        let eta = eta_bound(m_t, delta, n)?;
        let gamma = monotonicity_gamma(config, marginal_set)?;
        Ok(Self {
            eta,
            gamma,
            tau_threshold: tau_threshold(eps_bar, n, gamma)?,
            termination_t: termination_bound(eta, epsilon)?,
        })
    }
}
