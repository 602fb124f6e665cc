//! Subcommand implementations. Each writes its files under the report
//! directory and a short human-readable summary to `out`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sfe_core::datagen::{generate_market, Scenario, ALPHA_BAR, NAMED_INSTANCES};
use sfe_core::equilibrium::{nash_equilibrium, profit, GameInstance, NashOptions};
use sfe_core::evaluation::{compare_baseline, evaluate_estimate, Summary};
use sfe_core::io::{load_estimate, save_dataset, save_json, save_search_log, save_table, EstimateFile};
use sfe_core::learning::{coupled_modulus, random_search, TheoryBounds, VALIDATION_NASH_TOL};
use sfe_core::market::{marginal_clearing, MarketConfig};
use sfe_core::Error;

use crate::config::ExperimentConfig;
use crate::CliError;

pub const DATASET_FILE: &str = "dataset.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const LOG_FILE: &str = "search_log.csv";
pub const ESTIMATE_FILE: &str = "estimate.json";
pub const TEST_DISCREPANCY_FILE: &str = "test_discrepancy.csv";
pub const INSTANCE_BIDS_FILE: &str = "instance_bids.csv";
pub const INSTANCE_PROFITS_FILE: &str = "instance_profits.csv";
pub const BASELINE_TEST_FILE: &str = "baseline_test.csv";
pub const BASELINE_INSTANCES_FILE: &str = "baseline_instances.csv";

fn num(v: f64) -> String {
    v.to_string()
}

fn print(out: &mut dyn Write, text: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    out.write_fmt(text)
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| CliError::Config(format!("cannot write output: {e}")))
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        print($out, format_args!($($arg)*))
    };
}

fn report_dir(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.report.dir.clone();
    fs::create_dir_all(&dir).map_err(|source| Error::Io {
        path: dir.clone(),
        source,
    })?;
    Ok(dir)
}

fn named_instances() -> Vec<(&'static str, Scenario)> {
    NAMED_INSTANCES.to_vec()
}

fn estimate_path(cfg: &ExperimentConfig, explicit: Option<&Path>) -> PathBuf {
    explicit.map_or_else(|| cfg.report.dir.join(ESTIMATE_FILE), Path::to_path_buf)
}

/// Writes a generated dataset and its ground truth.
pub fn generate(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<(), CliError> {
    cfg.validate()?;
    let spec = cfg.dataset_spec()?;
    let market = cfg.market()?;
    market.ground_truth()?;
    let observations = cfg.dataset(&market)?;
    let dir = report_dir(cfg)?;
    let (data_path, truth_path) = (dir.join(DATASET_FILE), dir.join(TRUTH_FILE));
    save_dataset(&data_path, &observations)?;
    save_json(&truth_path, &market.truth_file())?;
    say!(
        out,
        "generated {} observations for {} suppliers (noise {}, seed {})",
        observations.len(),
        market.config.n_suppliers(),
        spec.noise_level,
        spec.seed
    )?;
    say!(out, "wrote {}", data_path.display())?;
    say!(out, "wrote {}", truth_path.display())
}

/// Runs the random search and writes its log and the best estimate.
pub fn estimate(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<(), CliError> {
    cfg.validate()?;
    let market = cfg.market()?;
    let data = cfg.dataset(&market)?;
    let sc = cfg.search.resolve();
    let dir = report_dir(cfg)?;
    let start = Instant::now();
    let result = random_search(&data, &market.config, &sc, market.thetas.as_deref());
    let elapsed = start.elapsed().as_secs_f64();
    let result = match result {
        Ok(r) => r,
        Err(Error::SearchFailed(failures)) => {
            for (k, msg) in failures.iter().take(10) {
                say!(out, "iteration {k} failed: {msg}")?;
            }
            return Err(Error::SearchFailed(failures).into());
        }
        Err(e) => return Err(e.into()),
    };
    let failed: Vec<usize> = result.log.iter().filter(|e| !e.succeeded()).map(|e| e.iter).collect();
    let (log_path, est_path) = (dir.join(LOG_FILE), dir.join(ESTIMATE_FILE));
    save_search_log(&log_path, &result.log)?;
    let file = EstimateFile::from_search(&result);
    save_json(&est_path, &file)?;
    say!(
        out,
        "iterations: {} of at most {} (tolerance {})",
        result.iterations_run,
        sc.max_iter,
        sc.tolerance
    )?;
    say!(out, "best validation discrepancy: {:.6} at iteration {}", result.best_discrepancy, result.best_iter)?;
    if let Some(m) = file.mape {
        say!(out, "MAPE of best estimate: {m:.4}%")?;
    }
    if !failed.is_empty() {
        say!(out, "failed iterations: {failed:?}")?;
    }
    say!(out, "wall time: {elapsed:.2}s")?;
    for (i, (a, b)) in file.theta1.iter().zip(&file.theta2).enumerate() {
        say!(out, "supplier {}: theta1 = {a:.6}, theta2 = {b:.6}", i + 1)?;
    }
    say!(out, "wrote {}", log_path.display())?;
    say!(out, "wrote {}", est_path.display())
}

/// Scores an estimate on the test scenarios and the named instances.
pub fn evaluate(cfg: &ExperimentConfig, estimate: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    cfg.validate()?;
    let truth = cfg.market()?.ground_truth()?;
    let thetas_hat = load_estimate(&estimate_path(cfg, estimate))?.thetas()?;
    let scenarios = cfg.test_scenarios()?;
    let tests = evaluate_estimate(&truth, &thetas_hat, &scenarios)?;
    let instances = named_instances();
    let inst_scenarios: Vec<Scenario> = instances.iter().map(|(_, s)| *s).collect();
    let named = evaluate_estimate(&truth, &thetas_hat, &inst_scenarios)?;
    let dir = report_dir(cfg)?;

    let rows: Vec<Vec<String>> = tests
        .iter()
        .enumerate()
        .map(|(j, r)| {
            vec![
                j.to_string(),
                num(r.scenario.demand),
                num(r.scenario.fuel_price),
                num(r.discrepancy),
                num(r.profit_true),
                num(r.profit_hat),
            ]
        })
        .collect();
    let p1 = dir.join(TEST_DISCREPANCY_FILE);
    save_table(&p1, &["scenario", "Q", "xi", "d", "profit_true", "profit_hat"], &rows)?;

    let mut rows = Vec::new();
    for ((name, s), r) in instances.iter().zip(&named) {
        for (i, (a, b)) in r.bids_true.iter().zip(&r.bids_hat).enumerate() {
            rows.push(vec![
                name.to_string(),
                num(s.demand),
                num(s.fuel_price),
                (i + 1).to_string(),
                num(*a),
                num(*b),
                num(r.discrepancy),
            ]);
        }
    }
    let p2 = dir.join(INSTANCE_BIDS_FILE);
    save_table(&p2, &["instance", "Q", "xi", "supplier", "alpha_true", "alpha_hat", "d"], &rows)?;

    let rows: Vec<Vec<String>> = instances
        .iter()
        .zip(&named)
        .map(|((name, _), r)| {
            vec![
                name.to_string(),
                num(r.profit_true),
                num(r.profit_hat),
                num((r.profit_hat - r.profit_true) / r.profit_true),
            ]
        })
        .collect();
    let p3 = dir.join(INSTANCE_PROFITS_FILE);
    save_table(&p3, &["instance", "profit_true", "profit_hat", "relative_difference"], &rows)?;

    let d: Vec<f64> = tests.iter().map(|r| r.discrepancy).collect();
    let s = Summary::of(&d)?;
    say!(out, "test scenarios: {}", tests.len())?;
    say!(out, "discrepancy: mean {:.4}, std {:.4}, min {:.4}, max {:.4}", s.mean, s.std, s.min, s.max)?;
    for ((name, _), r) in instances.iter().zip(&named) {
        say!(
            out,
            "instance {name}: d = {:.4}, profit true {:.3}, estimated {:.3}",
            r.discrepancy,
            r.profit_true,
            r.profit_hat
        )?;
    }
    for p in [p1, p2, p3] {
        say!(out, "wrote {}", p.display())?;
    }
    Ok(())
}

/// Compares the estimate with the mean-bid baseline built from the dataset.
pub fn baseline(cfg: &ExperimentConfig, estimate: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    cfg.validate()?;
    let market = cfg.market()?;
    let truth = market.ground_truth()?;
    let history = cfg.dataset(&market)?;
    let thetas_hat = load_estimate(&estimate_path(cfg, estimate))?.thetas()?;
    let scenarios = cfg.test_scenarios()?;
    let tests = compare_baseline(&truth, &thetas_hat, &history, &scenarios)?;
    let instances = named_instances();
    let inst_scenarios: Vec<Scenario> = instances.iter().map(|(_, s)| *s).collect();
    let named = compare_baseline(&truth, &thetas_hat, &history, &inst_scenarios)?;
    let dir = report_dir(cfg)?;
    let header = [
        "scenario",
        "Q",
        "xi",
        "d_inverse",
        "d_baseline",
        "profit_true",
        "profit_inverse",
        "profit_baseline",
    ];
    let row = |label: String, r: &sfe_core::evaluation::BaselineReport| {
        vec![
            label,
            num(r.scenario.demand),
            num(r.scenario.fuel_price),
            num(r.d_inverse),
            num(r.d_baseline),
            num(r.profit_true),
            num(r.profit_inverse),
            num(r.profit_baseline),
        ]
    };
    let rows: Vec<Vec<String>> = tests.iter().enumerate().map(|(j, r)| row(j.to_string(), r)).collect();
    let p1 = dir.join(BASELINE_TEST_FILE);
    save_table(&p1, &header, &rows)?;
    let rows: Vec<Vec<String>> = instances
        .iter()
        .zip(&named)
        .map(|((name, _), r)| row(name.to_string(), r))
        .collect();
    let p2 = dir.join(BASELINE_INSTANCES_FILE);
    save_table(&p2, &header, &rows)?;

    let inv = Summary::of(&tests.iter().map(|r| r.d_inverse).collect::<Vec<_>>())?;
    let base = Summary::of(&tests.iter().map(|r| r.d_baseline).collect::<Vec<_>>())?;
    say!(out, "test scenarios: {}", tests.len())?;
    say!(out, "inverse method: mean d {:.4} (std {:.4})", inv.mean, inv.std)?;
    say!(out, "baseline:       mean d {:.4} (std {:.4})", base.mean, base.std)?;
    for ((name, _), r) in instances.iter().zip(&named) {
        say!(out, "instance {name}: inverse d {:.4}, baseline d {:.4}", r.d_inverse, r.d_baseline)?;
    }
    say!(out, "wrote {}", p1.display())?;
    say!(out, "wrote {}", p2.display())
}

/// Equilibrium bids and profits under the estimated costs for one scenario.
pub fn advise(
    cfg: &ExperimentConfig,
    estimate: Option<&Path>,
    scenario: Scenario,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    cfg.validate()?;
    let market = cfg.market()?;
    let thetas_hat = load_estimate(&estimate_path(cfg, estimate))?.thetas()?;
    let config = &market.config;
    if thetas_hat.len() != config.n_suppliers() {
        return Err(CliError::Config(format!(
            "estimate has {} suppliers, the market has {}",
            thetas_hat.len(),
            config.n_suppliers()
        )));
    }
    let (min, max) = config.feasible_demand();
    let q = scenario.demand;
    if !(q.is_finite() && q > 0.0 && q >= min && q <= max) {
        return Err(Error::InfeasibleDemand { demand: q, min, max }.into());
    }
    if !(scenario.fuel_price.is_finite() && scenario.fuel_price > 0.0) {
        return Err(CliError::Config(format!("fuel price {} must be positive", scenario.fuel_price)));
    }
    let inst = GameInstance::all_marginal(config, q, scenario.fuel_price)?;
    let opts = NashOptions {
        tol: VALIDATION_NASH_TOL,
        ..NashOptions::default()
    };
    let bids = nash_equilibrium(&thetas_hat, &inst, &opts)?.into_inner();
    let all: Vec<usize> = (0..config.n_suppliers()).collect();
    let (price, dispatch) = marginal_clearing(&bids, config, &all, q)?;
    say!(out, "Q = {q}, xi = {}: clearing price {price:.6}", scenario.fuel_price)?;
    say!(out, "supplier,alpha,dispatch,profit")?;
    let mut total = 0.0;
    for (i, theta) in thetas_hat.iter().enumerate() {
        let p = profit(theta, &bids, &inst, i)?;
        total += p;
        say!(out, "{},{:.6},{:.6},{:.6}", i + 1, bids[i], dispatch[i], p)?;
    }
    say!(out, "total profit: {total:.6}")
}

/// Inputs of the bounds command.
#[derive(Clone, Debug)]
pub struct BoundsArgs {
    pub m_train: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub eps_bar: f64,
    pub n: Option<usize>,
    pub beta: Option<Vec<f64>>,
}

/// Prints the sample-size and termination bounds of the search.
pub fn bounds(cfg: &ExperimentConfig, args: &BoundsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = match (&args.beta, args.n) {
        (Some(beta), n) => {
            if n.is_some_and(|n| n != beta.len()) {
                return Err(CliError::Config(format!("--n {} disagrees with {} slopes", n.unwrap(), beta.len())));
            }
            MarketConfig::uncapacitated(beta.clone(), ALPHA_BAR)?
        }
        (None, Some(n)) => generate_market(n)?.config,
        (None, None) => {
            cfg.validate()?;
            cfg.market()?.config
        }
    };
    let all: Vec<usize> = (0..config.n_suppliers()).collect();
    let b = TheoryBounds::compute(&config, &all, args.m_train, args.delta, args.epsilon, args.eps_bar)?;
    say!(out, "N = {}, M_t = {}, delta = {}", all.len(), args.m_train, args.delta)?;
    say!(out, "eta = {:e}", b.eta)?;
    say!(out, "gamma = {}", b.gamma)?;
    say!(out, "tau threshold (eps_bar = {}) = {}", args.eps_bar, b.tau_threshold)?;
    say!(out, "iterations T for eta^T <= {} : {}", args.epsilon, b.termination_t)?;
    say!(out, "coupled modulus = {}", coupled_modulus(&config, &all)?)
}
