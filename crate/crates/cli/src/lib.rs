//! Experiment runner: dataset generation, estimation, out-of-sample
//! evaluation, baseline comparison, bid advice and theoretical bounds.

pub mod commands;
pub mod config;

pub use config::ExperimentConfig;

/// Exit status for success.
pub const EXIT_OK: i32 = 0;
/// Exit status for invalid configuration, arguments or input files.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for numerical failures (non-convergence, failed estimation).
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] sfe_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use sfe_core::Error as E;
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) => match e {
                E::Domain(_)
                | E::SupplierOutOfRange { .. }
                | E::InfeasibleDemand { .. }
                | E::LengthMismatch { .. }
                | E::Io { .. }
                | E::Parse { .. } => EXIT_CONFIG,
                _ => EXIT_NUMERICAL,
            },
        }
    }
}
