use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sfe_cli::commands::{self, BoundsArgs};
use sfe_cli::config::{DatasetSpec, MarketSpec, TestSpec};
use sfe_cli::{CliError, ExperimentConfig, EXIT_CONFIG};
use sfe_core::datagen::{NoiseModel, Scenario};

#[derive(Parser, Debug)]
#[command(name = "sfe", version, about = "Supply-function equilibrium cost estimation experiments")]
struct Cli {
    /// JSON experiment configuration; flags override its values.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation, the search splits and test scenarios.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the search.
    #[arg(long, global = true, env = "SFE_WORKERS")]
    workers: Option<usize>,
    /// Report directory.
    #[arg(long, short, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct MarketArgs {
    /// Ground-truth or market JSON file.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Use the synthetic market with this many suppliers.
    #[arg(long, conflicts_with = "truth")]
    n: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// Dataset CSV file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Number of generated observations.
    #[arg(long, conflicts_with = "dataset")]
    m: Option<usize>,
    /// Relative bid noise level, e.g. 0.01.
    #[arg(long, conflicts_with = "dataset")]
    noise: Option<f64>,
    #[arg(long, value_enum, conflicts_with = "dataset")]
    noise_model: Option<NoiseArg>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum NoiseArg {
    Uniform,
    TruncatedGaussian,
}

#[derive(Args, Debug, Default)]
struct TestArgs {
    /// Number of generated test scenarios.
    #[arg(long)]
    test_size: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset and its ground truth.
    Generate {
        #[command(flatten)]
        market: MarketArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Estimate costs by random search over training splits.
    Estimate {
        #[command(flatten)]
        market: MarketArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Maximum number of training splits [default: 1000].
        #[arg(long)]
        max_iter: Option<usize>,
        /// Stop once a split's validation discrepancy falls below this.
        #[arg(long)]
        tolerance: Option<f64>,
        /// Share of observations used for training in each split.
        #[arg(long)]
        train_fraction: Option<f64>,
        /// Record wall-clock time per iteration in the log.
        #[arg(long)]
        timing: bool,
    },
    /// Score an estimate on test scenarios and the named instances.
    Evaluate {
        #[command(flatten)]
        market: MarketArgs,
        #[command(flatten)]
        test: TestArgs,
        /// Estimate JSON (default: <out-dir>/estimate.json).
        #[arg(long)]
        estimate: Option<PathBuf>,
    },
    /// Compare an estimate with the mean-bid baseline.
    Baseline {
        #[command(flatten)]
        market: MarketArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        test: TestArgs,
        /// Estimate JSON (default: <out-dir>/estimate.json).
        #[arg(long)]
        estimate: Option<PathBuf>,
    },
    /// Recommended bids under the estimated costs for one scenario.
    Advise {
        #[command(flatten)]
        market: MarketArgs,
        /// Estimate JSON (default: <out-dir>/estimate.json).
        #[arg(long)]
        estimate: Option<PathBuf>,
        /// Demand Q.
        #[arg(long)]
        demand: f64,
        /// Fuel price xi.
        #[arg(long)]
        fuel: f64,
    },
    /// Sample-size and termination bounds of the search.
    Bounds {
        /// Training set size M_t.
        #[arg(long)]
        m_train: usize,
        /// Per-observation probability in the sample-size bound, in (0, 1).
        #[arg(long)]
        delta: f64,
        /// Target probability for the iteration bound.
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
        /// Bound on the optimal inverse objective.
        #[arg(long, default_value_t = 1e-3)]
        eps_bar: f64,
        /// Use the synthetic market with this many suppliers.
        #[arg(long)]
        n: Option<usize>,
        /// Comma-separated supply slopes.
        #[arg(long, value_delimiter = ',')]
        beta: Option<Vec<f64>>,
        /// Take the slopes from a market JSON file.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

fn apply_market(cfg: &mut ExperimentConfig, m: &MarketArgs) {
    if let Some(path) = &m.truth {
        cfg.market.path = Some(path.clone());
        cfg.market.spec = None;
    }
    if let Some(n) = m.n {
        cfg.market.path = None;
        cfg.market.spec = Some(MarketSpec { n });
    }
}

fn apply_data(cfg: &mut ExperimentConfig, d: &DataArgs) {
    if let Some(path) = &d.dataset {
        cfg.dataset.path = Some(path.clone());
        cfg.dataset.spec = None;
    }
    if d.m.is_some() || d.noise.is_some() || d.noise_model.is_some() {
        cfg.dataset.path = None;
        let spec = cfg.dataset.spec.get_or_insert_with(DatasetSpec::default);
        if let Some(m) = d.m {
            spec.m = m;
        }
        if let Some(nu) = d.noise {
            spec.noise_level = nu;
        }
        if let Some(model) = d.noise_model {
            spec.noise = match model {
                NoiseArg::Uniform => NoiseModel::Uniform,
                NoiseArg::TruncatedGaussian => NoiseModel::TruncatedGaussian,
            };
        }
    }
}

fn apply_test(cfg: &mut ExperimentConfig, t: &TestArgs) {
    if let Some(m) = t.test_size {
        cfg.test.scenarios = None;
        cfg.test.spec.get_or_insert_with(TestSpec::default).m = m;
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(dir) = cli.out_dir {
        cfg.report.dir = dir;
    }
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(CliError::Config("worker count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {w} workers: {e}")))?;
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Generate { market, data } => {
            apply_market(&mut cfg, &market);
            apply_data(&mut cfg, &data);
            commands::generate(&cfg, &mut out)
        }
        Command::Estimate {
            market,
            data,
            max_iter,
            tolerance,
            train_fraction,
            timing,
        } => {
            apply_market(&mut cfg, &market);
            apply_data(&mut cfg, &data);
            let s = &mut cfg.search;
            s.max_iter = max_iter.or(s.max_iter);
            s.tolerance = tolerance.or(s.tolerance);
            s.train_fraction = train_fraction.or(s.train_fraction);
            if timing {
                s.record_timing = Some(true);
            }
            commands::estimate(&cfg, &mut out)
        }
        Command::Evaluate { market, test, estimate } => {
            apply_market(&mut cfg, &market);
            apply_test(&mut cfg, &test);
            commands::evaluate(&cfg, estimate.as_deref(), &mut out)
        }
        Command::Baseline {
            market,
            data,
            test,
            estimate,
        } => {
            apply_market(&mut cfg, &market);
            apply_data(&mut cfg, &data);
            apply_test(&mut cfg, &test);
            commands::baseline(&cfg, estimate.as_deref(), &mut out)
        }
        Command::Advise {
            market,
            estimate,
            demand,
            fuel,
        } => {
            apply_market(&mut cfg, &market);
            let scenario = Scenario {
                demand,
                fuel_price: fuel,
            };
            commands::advise(&cfg, estimate.as_deref(), scenario, &mut out)
        }
        Command::Bounds {
            m_train,
            delta,
            epsilon,
            eps_bar,
            n,
            beta,
            truth,
        } => {
            apply_market(&mut cfg, &MarketArgs { truth, n: None });
            let args = BoundsArgs {
                m_train,
                delta,
                epsilon,
                eps_bar,
                n,
                beta,
            };
            commands::bounds(&cfg, &args, &mut out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            ExitCode::from(u8::try_from(code).unwrap_or(EXIT_CONFIG as u8))
        }
    }
}
