use thiserror::Error;

use crate::domain::{Metric, MrKey};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("allocation of {mr} is {amount}, must be strictly positive")]
    Singularity { mr: MrKey, amount: f64 },

    #[error("metric mismatch: {0} vs {1}")]
    MetricMismatch(Metric, Metric),

    #[error("{0} is not part of the deployment")]
    UnknownMr(MrKey),

    #[error("moving {amount} out of {donor} would cross its floor (headroom {headroom})")]
    DonorFloor {
        donor: MrKey,
        amount: f64,
        headroom: f64,
    },

    #[error("infeasible constraint: {0}")]
    InfeasibleConstraint(String),

    #[error("no feasible point on the allocation grid")]
    NoFeasiblePoint,

    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
