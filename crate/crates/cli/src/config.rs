//! Experiment configuration file. Every section but `search` and `report`
//! names either a file (`path`) or an inline description (`spec`), never both.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sfe_core::datagen::{generate_market, generate_observations, generate_scenarios, NoiseModel, Scenario, ScenarioRanges};
use sfe_core::equilibrium::CostParams;
use sfe_core::inverse::{InverseOptions, Observation};
use sfe_core::io::{load_dataset, load_truth, TruthFile};
use sfe_core::learning::SearchConfig;
use sfe_core::market::MarketConfig;

use crate::CliError;

pub const DEFAULT_SUPPLIERS: usize = 5;
pub const DEFAULT_OBSERVATIONS: usize = 200;
pub const DEFAULT_NOISE: f64 = 0.01;
pub const DEFAULT_MAX_ITER: usize = 1000;
pub const DEFAULT_TEST_SIZE: usize = 100;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub market: MarketSection,
    pub dataset: DatasetSection,
    pub search: SearchSection,
    pub test: TestSection,
    pub report: ReportSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub path: Option<PathBuf>,
    pub spec: Option<MarketSpec>,
}

impl Default for MarketSection {
    fn default() -> Self {
        Self {
            path: None,
            spec: Some(MarketSpec { n: DEFAULT_SUPPLIERS }),
        }
    }
}

/// The synthetic market with `n` suppliers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: Option<PathBuf>,
    pub spec: Option<DatasetSpec>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            path: None,
            spec: Some(DatasetSpec::default()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub m: usize,
    pub ranges: ScenarioRanges,
    pub noise_level: f64,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            m: DEFAULT_OBSERVATIONS,
            ranges: ScenarioRanges::default(),
            noise_level: DEFAULT_NOISE,
            noise: NoiseModel::Uniform,
            seed: 0,
        }
    }
}

/// Search settings; absent fields take the library defaults except
/// `max_iter`, which defaults to [`DEFAULT_MAX_ITER`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub train_fraction: Option<f64>,
    pub tolerance: Option<f64>,
    pub max_iter: Option<usize>,
    pub master_seed: Option<u64>,
    pub record_timing: Option<bool>,
    pub inverse: Option<InverseOptions>,
}

impl SearchSection {
    pub fn resolve(&self) -> SearchConfig {
        let d = SearchConfig::default();
        SearchConfig {
            train_fraction: self.train_fraction.unwrap_or(d.train_fraction),
            tolerance: self.tolerance.unwrap_or(d.tolerance),
            max_iter: self.max_iter.unwrap_or(DEFAULT_MAX_ITER),
            master_seed: self.master_seed.unwrap_or(d.master_seed),
            record_timing: self.record_timing.unwrap_or(d.record_timing),
            inverse: self.inverse.clone().unwrap_or(d.inverse),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSection {
    pub scenarios: Option<Vec<Scenario>>,
    pub spec: Option<TestSpec>,
}

impl Default for TestSection {
    fn default() -> Self {
        Self {
            scenarios: None,
            spec: Some(TestSpec::default()),
        }
    }
}

/// Fresh test scenarios. Without a seed they are drawn with the dataset
/// seed plus one, so they never repeat the training draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestSpec {
    pub m: usize,
    pub ranges: ScenarioRanges,
    pub seed: Option<u64>,
}

impl Default for TestSpec {
    fn default() -> Self {
        Self {
            m: DEFAULT_TEST_SIZE,
            ranges: ScenarioRanges::default(),
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub dir: PathBuf,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("report"),
        }
    }
}

fn exactly_one<A, B>(section: &str, a: &Option<A>, b: &Option<B>, names: (&str, &str)) -> Result<(), CliError> {
    match (a.is_some(), b.is_some()) {
        (true, false) | (false, true) => Ok(()),
        _ => Err(CliError::Config(format!(
            "section `{section}` needs exactly one of `{}` and `{}`",
            names.0, names.1
        ))),
    }
}

/// A market with its true costs when they are known.
#[derive(Clone, Debug)]
pub struct Market {
    pub config: MarketConfig,
    pub thetas: Option<Vec<CostParams>>,
}

impl Market {
    pub fn truth_file(&self) -> TruthFile {
        let c = &self.config;
        let thetas = self.thetas.as_ref();
        TruthFile {
            n: c.n_suppliers(),
            theta1: thetas.map(|t| t.iter().map(|p| p.theta1).collect()),
            theta2: thetas.map(|t| t.iter().map(|p| p.theta2).collect()),
            beta: c.beta().to_vec(),
            alpha_bar: c.alpha_bar(),
            p_min: Some(c.p_min().to_vec()),
            p_max: Some(c.p_max().to_vec()),
        }
    }

    pub fn ground_truth(&self) -> Result<sfe_core::datagen::GroundTruth, CliError> {
        let thetas = self
            .thetas
            .clone()
            .ok_or_else(|| CliError::Config("this command needs true costs in the market file".into()))?;
        Ok(sfe_core::datagen::GroundTruth {
            thetas,
            config: self.config.clone(),
        })
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        exactly_one("market", &self.market.path, &self.market.spec, ("path", "spec"))?;
        exactly_one("dataset", &self.dataset.path, &self.dataset.spec, ("path", "spec"))?;
        exactly_one("test", &self.test.scenarios, &self.test.spec, ("scenarios", "spec"))?;
        if let Some(spec) = &self.market.spec {
            if spec.n < 2 {
                return Err(CliError::Config(format!("market needs at least 2 suppliers, got {}", spec.n)));
            }
        }
        if let Some(spec) = &self.dataset.spec {
            if spec.m == 0 {
                return Err(CliError::Config("dataset size m must be at least 1".into()));
            }
            if !(spec.noise_level.is_finite() && spec.noise_level >= 0.0) {
                return Err(CliError::Config(format!("noise level {} must be non-negative", spec.noise_level)));
            }
            spec.ranges.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(spec) = &self.test.spec {
            if spec.m == 0 {
                return Err(CliError::Config("test size m must be at least 1".into()));
            }
            spec.ranges.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        if matches!(&self.test.scenarios, Some(s) if s.is_empty()) {
            return Err(CliError::Config("test scenario list is empty".into()));
        }
        self.search.resolve().validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Applies `--seed` to every seeded section.
    pub fn set_seed(&mut self, seed: u64) {
        if let Some(spec) = &mut self.dataset.spec {
            spec.seed = seed;
        }
        if let Some(spec) = &mut self.test.spec {
            spec.seed = Some(seed.wrapping_add(1));
        }
        self.search.master_seed = Some(seed);
    }

    pub fn market(&self) -> Result<Market, CliError> {
        match (&self.market.path, &self.market.spec) {
            (Some(path), None) => {
                let file = load_truth(path)?;
                Ok(Market {
                    config: file.config()?,
                    thetas: file.thetas()?,
                })
            }
            (None, Some(spec)) => {
                let truth = generate_market(spec.n)?;
                Ok(Market {
                    config: truth.config,
                    thetas: Some(truth.thetas),
                })
            }
            _ => Err(CliError::Config("section `market` needs exactly one of `path` and `spec`".into())),
        }
    }

    /// The observations, read from disk or generated from the spec.
    pub fn dataset(&self, market: &Market) -> Result<Vec<Observation>, CliError> {
        match (&self.dataset.path, &self.dataset.spec) {
            (Some(path), None) => {
                let obs = load_dataset(path, Some(market.config.beta()))?;
                if let Some(bad) = obs.iter().find(|o| o.bids.len() != market.config.n_suppliers()) {
                    return Err(CliError::Config(format!(
                        "{}: observations have {} suppliers, the market has {}",
                        path.display(),
                        bad.bids.len(),
                        market.config.n_suppliers()
                    )));
                }
                Ok(obs)
            }
            (None, Some(spec)) => {
                let truth = market.ground_truth()?;
                Ok(generate_observations(&truth, spec.m, &spec.ranges, spec.noise_level, spec.noise, spec.seed)?)
            }
            _ => Err(CliError::Config("section `dataset` needs exactly one of `path` and `spec`".into())),
        }
    }

    pub fn dataset_spec(&self) -> Result<&DatasetSpec, CliError> {
        self.dataset
            .spec
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs a dataset `spec`, not a `path`".into()))
    }

    pub fn test_scenarios(&self) -> Result<Vec<Scenario>, CliError> {
        match (&self.test.scenarios, &self.test.spec) {
            (Some(list), None) => Ok(list.clone()),
            (None, Some(spec)) => {
                let data_seed = self.dataset.spec.as_ref().map_or(0, |d| d.seed);
                let seed = spec.seed.unwrap_or(data_seed.wrapping_add(1));
                Ok(generate_scenarios(&spec.ranges, spec.m, seed)?)
            }
            _ => Err(CliError::Config("section `test` needs exactly one of `scenarios` and `spec`".into())),
        }
    }
}
