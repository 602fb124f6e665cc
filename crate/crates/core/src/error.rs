use std::path::PathBuf;

use crate::lp::LpStatus;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Domain(String),

    #[error("marginal set is empty")]
    EmptyMarginalSet,

    #[error("supplier {supplier} is not in the marginal set")]
    NotMarginal { supplier: usize },

    #[error("supplier index {supplier} out of range for {n} suppliers")]
    SupplierOutOfRange { supplier: usize, n: usize },

    #[error("demand {demand} outside feasible range [{min}, {max}]")]
    InfeasibleDemand { demand: f64, min: f64, max: f64 },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("best-response iteration did not converge after {rounds} rounds (residual {residual:e})")]
    NotConverged {
        rounds: usize,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("cost parameters of supplier {supplier} are not identifiable: {reason}")]
    Unidentifiable { supplier: usize, reason: String },

    #[error("linear program not solved to optimality: {0:?}")]
    Lp(LpStatus),

    #[error("every search iteration failed ({} failures)", .0.len())]
    SearchFailed(Vec<(usize, String)>),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
