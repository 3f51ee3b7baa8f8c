use alloc::boxed::Box;
use alloc::string::String;

/// Errors produced by the modelling, sampling and validation routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("predictor column `{0}` has zero standard deviation")]
    ConstantColumn(String),
    #[error("input matrix is numerically zero")]
    DegenerateInput,
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParam(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("covariance matrix is not positive definite after jitter")]
    NotPositiveDefinite,
    #[error("triangular factor has a zero pivot")]
    SingularFactor,
    #[error("parameter outside prior support")]
    OutOfSupport,
    #[error("design columns are rank deficient")]
    RankDeficient,
    #[error("mean of the reference values is zero")]
    ZeroMeanTruth,
    #[error("reference values are constant")]
    ConstantTruth,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }

    /// Strips iteration context and returns the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtIteration { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
