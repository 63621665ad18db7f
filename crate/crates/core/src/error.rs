use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A covariance evaluation produced a non-finite value.
    #[error("covariance evaluation failed: {0}")]
    Evaluation(String),

    /// Cholesky factorization failed even with the largest allowed jitter.
    #[error(
        "cholesky factorization of a {dim}x{dim} matrix failed after jitter {jitter:e} \
         (diag range [{min_diag:e}, {max_diag:e}])"
    )]
    Factorization {
        dim: usize,
        jitter: f64,
        min_diag: f64,
        max_diag: f64,
    },

    /// Other numerical failures (singular matrices, eigen-solver errors, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A failure inside one block of a composite likelihood.
    #[error("block {block}: {source}")]
    Block {
        block: String,
        #[source]
        source: Box<Error>,
    },

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// A computation was refused because it exceeds the configured size caps.
    #[error("refused: {0}")]
    TooLarge(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn in_block(self, block: impl Into<String>) -> Self {
        Error::Block {
            block: block.into(),
            source: Box::new(self),
        }
    }

    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Evaluation(_) | Error::Factorization { .. } | Error::Numerical(_) => true,
            Error::Block { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
