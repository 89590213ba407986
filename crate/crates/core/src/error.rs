use thiserror::Error;

use crate::spd::SpdMatrix;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    EigenNonConvergence { sweeps: usize, off_norm: f64 },

    #[error(
        "Frechet mean did not converge after {iterations} iterations (gradient norm {grad_norm:e})"
    )]
    NotConverged {
        iterations: usize,
        grad_norm: f64,
        last_iterate: Box<SpdMatrix>,
    },

    #[error(
        "label structure needs rank {needed} but only {available} informative coordinates exist"
    )]
    InfeasibleRank { needed: usize, available: usize },

    #[error("time series length {samples} is shorter than the dimension {dim}")]
    RankDeficient { samples: usize, dim: usize },

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("numerical failure{}: {message}", epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    Numerical {
        message: String,
        epoch: Option<usize>,
    },

    #[error("domain {domain}: {source}")]
    InDomain {
        domain: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_domain(self, domain: u32) -> Self {
        Error::InDomain {
            domain,
            source: Box::new(self),
        }
    }

    pub(crate) fn numerical(message: impl Into<String>, epoch: Option<usize>) -> Self {
        Error::Numerical {
            message: message.into(),
            epoch,
        }
    }
}
