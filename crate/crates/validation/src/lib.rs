//! Seeded end-to-end experiments shared by the acceptance checks: generate a
//! market and its history, run the random search, and score the estimate on
//! fresh test scenarios and the named instances.

use std::collections::HashMap;
use std::rc::Rc;
use std::time::Instant;

use sfe_core::datagen::{generate_market, generate_observations, generate_scenarios, GroundTruth, NoiseModel, ScenarioRanges, NAMED_INSTANCES};
use sfe_core::evaluation::{compare_baseline, BaselineReport};
use sfe_core::inverse::Observation;
use sfe_core::learning::{mape, random_search, SearchConfig, SearchResult};
use sfe_core::Result;

pub const TEST_SCENARIOS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Experiment {
    pub n: usize,
    /// Noise level in basis points, so the key stays hashable.
    pub noise_bp: u32,
    pub m: usize,
    pub seed: u64,
    pub max_iter: usize,
}

impl Experiment {
    pub fn new(n: usize, noise: f64, m: usize, seed: u64, max_iter: usize) -> Self {
        Self {
            n,
            noise_bp: (noise * 1e4).round() as u32,
            m,
            seed,
            max_iter,
        }
    }

    pub fn noise(&self) -> f64 {
        f64::from(self.noise_bp) / 1e4
    }
}

pub struct Outcome {
    pub truth: GroundTruth,
    pub data: Vec<Observation>,
    pub result: SearchResult,
    /// Wall time of the search alone.
    pub seconds: f64,
    pub mape: f64,
    /// Estimate and baseline on fresh scenarios from the training ranges.
    pub test: Vec<BaselineReport>,
    /// The same on the named instances (a), (b), (c).
    pub instances: Vec<BaselineReport>,
}

impl Outcome {
    pub fn mean_test_d(&self) -> f64 {
        self.test.iter().map(|r| r.d_inverse).sum::<f64>() / self.test.len() as f64
    }

    pub fn mean_baseline_d(&self) -> f64 {
        self.test.iter().map(|r| r.d_baseline).sum::<f64>() / self.test.len() as f64
    }
}

pub fn run(e: Experiment) -> Result<Outcome> {
    let truth = generate_market(e.n)?;
    let ranges = ScenarioRanges::default();
    let data = generate_observations(&truth, e.m, &ranges, e.noise(), NoiseModel::Uniform, e.seed)?;
    let sc = SearchConfig {
        max_iter: e.max_iter,
        master_seed: e.seed,
        ..SearchConfig::default()
    };
    let start = Instant::now();
    let result = random_search(&data, &truth.config, &sc, Some(&truth.thetas))?;
    let seconds = start.elapsed().as_secs_f64();
    let scenarios = generate_scenarios(&ranges, TEST_SCENARIOS, e.seed.wrapping_add(1))?;
    let named: Vec<_> = NAMED_INSTANCES.iter().map(|(_, s)| *s).collect();
    let test = compare_baseline(&truth, &result.best_thetas, &data, &scenarios)?;
    let instances = compare_baseline(&truth, &result.best_thetas, &data, &named)?;
    Ok(Outcome {
        mape: mape(&truth.thetas, &result.best_thetas)?,
        truth,
        data,
        result,
        seconds,
        test,
        instances,
    })
}

/// Runs each experiment once and hands out the cached outcome afterwards.
#[derive(Default)]
pub struct Runner {
    cache: HashMap<Experiment, Rc<Outcome>>,
}

impl Runner {
    pub fn get(&mut self, e: Experiment) -> Result<Rc<Outcome>> {
        if let Some(o) = self.cache.get(&e) {
            return Ok(Rc::clone(o));
        }
        let o = Rc::new(run(e)?);
        self.cache.insert(e, Rc::clone(&o));
        Ok(o)
    }
}
