//! Out-of-sample scoring of cost estimates and of the mean-bid baseline on
//! test scenarios.

use serde::{Deserialize, Serialize};

use crate::datagen::{equilibrium_bids, wen_david_bids, GroundTruth, Scenario, DATA_NASH_TOL};
use crate::equilibrium::{nash_equilibrium, total_profit, CostParams, GameInstance, NashOptions};
use crate::error::{Error, Result};
use crate::inverse::Observation;
use crate::learning::discrepancy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub bids_true: Vec<f64>,
    pub bids_hat: Vec<f64>,
    pub discrepancy: f64,
    /// Total profit at the true-cost equilibrium, with true costs.
    pub profit_true: f64,
    /// Total profit at the estimated-cost equilibrium, with estimated costs.
    pub profit_hat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub scenario: Scenario,
    pub bids_true: Vec<f64>,
    pub bids_inverse: Vec<f64>,
    pub bids_baseline: Vec<f64>,
    pub d_inverse: f64,
    pub d_baseline: f64,
    pub profit_true: f64,
    pub profit_inverse: f64,
    /// Total true-cost profit when everyone plays the baseline bids.
    pub profit_baseline: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("cannot summarise an empty sample"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            mean,
            std,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

fn scenario_bids(thetas: &[CostParams], truth: &GroundTruth, scenario: Scenario) -> Result<Vec<f64>> {
    let inst = GameInstance::all_marginal(&truth.config, scenario.demand, scenario.fuel_price)?;
    let opts = NashOptions {
        tol: DATA_NASH_TOL,
        ..NashOptions::default()
    };
    Ok(nash_equilibrium(thetas, &inst, &opts)?.into_inner())
}

fn scenario_profit(thetas: &[CostParams], bids: &[f64], truth: &GroundTruth, scenario: Scenario) -> Result<f64> {
    let inst = GameInstance::all_marginal(&truth.config, scenario.demand, scenario.fuel_price)?;
    total_profit(thetas, bids, &inst)
}

fn check_thetas(truth: &GroundTruth, thetas_hat: &[CostParams]) -> Result<()> {
    if thetas_hat.len() != truth.thetas.len() {
        return Err(Error::LengthMismatch {
            expected: truth.thetas.len(),
            got: thetas_hat.len(),
        });
    }
    Ok(())
}

/// Equilibrium bids and total profits under the estimated and the true costs
/// at each scenario, all suppliers marginal.
pub fn evaluate_estimate(
    truth: &GroundTruth,
    thetas_hat: &[CostParams],
    scenarios: &[Scenario],
) -> Result<Vec<ScenarioReport>> {
    check_thetas(truth, thetas_hat)?;
    let n = truth.config.n_suppliers();
    scenarios
        .iter()
        .map(|&scenario| {
            let bids_true = equilibrium_bids(truth, scenario)?;
            let bids_hat = scenario_bids(thetas_hat, truth, scenario)?;
            Ok(ScenarioReport {
                scenario,
                discrepancy: discrepancy(&[&bids_true], &[&bids_hat], n)?,
                profit_true: scenario_profit(&truth.thetas, &bids_true, truth, scenario)?,
                profit_hat: scenario_profit(thetas_hat, &bids_hat, truth, scenario)?,
                bids_true,
                bids_hat,
            })
        })
        .collect()
}

/// Side-by-side scores of the estimated-cost equilibrium and the mean-bid
/// baseline built from `history`.
pub fn compare_baseline(
    truth: &GroundTruth,
    thetas_hat: &[CostParams],
    history: &[Observation],
    scenarios: &[Scenario],
) -> Result<Vec<BaselineReport>> {
    check_thetas(truth, thetas_hat)?;
    if history.is_empty() {
        return Err(Error::domain("baseline needs a nonempty bid history"));
    }
    let n = truth.config.n_suppliers();
    scenarios
        .iter()
        .map(|&scenario| {
            let bids_true = equilibrium_bids(truth, scenario)?;
            let bids_inverse = scenario_bids(thetas_hat, truth, scenario)?;
            let bids_baseline = wen_david_bids(history, truth, scenario)?;
            Ok(BaselineReport {
                scenario,
                d_inverse: discrepancy(&[&bids_true], &[&bids_inverse], n)?,
                d_baseline: discrepancy(&[&bids_true], &[&bids_baseline], n)?,
                profit_true: scenario_profit(&truth.thetas, &bids_true, truth, scenario)?,
                profit_inverse: scenario_profit(thetas_hat, &bids_inverse, truth, scenario)?,
                profit_baseline: scenario_profit(&truth.thetas, &bids_baseline, truth, scenario)?,
                bids_true,
                bids_inverse,
                bids_baseline,
            })
        })
        .collect()
}
