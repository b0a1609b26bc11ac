use thiserror::Error;

/// Errors raised across the pipeline.
///
/// The variants split along the lines the command-line front end cares
/// about: configuration and contract problems are user errors, numerical
/// failures mean training or a solver went off the rails.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("format error at byte offset {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("degenerate affinity: {0}")]
    DegenerateAffinity(String),

    #[error("regularization required: {0}")]
    RegularizationRequired(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for failures caused by numerics rather than by inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Divergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
