use thiserror::Error;

/// Crate-wide error type.
///
/// The variants mirror the failure classes the library distinguishes:
/// shape mismatches, numeric domain violations, broken caller contracts,
/// bad data, malformed files, and invalid configuration.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("at iteration {iteration}: {source}")]
    Iteration {
        iteration: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn dimension(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn at_iteration(self, iteration: u64) -> Self {
        Error::Iteration {
            iteration,
            source: Box::new(self),
        }
    }

    /// True for errors caused by user-supplied configuration rather than
    /// runtime failures. The CLI maps these to a distinct exit code.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Iteration { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
