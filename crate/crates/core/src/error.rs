use thiserror::Error;

/// Errors raised while ingesting data, building a model or running a chain.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates a dataset invariant.
    #[error("data error: subject {subject}, row {row}: {message}")]
    Data {
        subject: String,
        row: usize,
        message: String,
    },

    /// Configuration or model specification is inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Basis evaluation outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate knot sequence: {0}")]
    DegenerateKnots(String),

    #[error("covariance not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// The hazard integrand produced a non-finite value.
    #[error("non-finite hazard integrand at node s = {node} (log hazard = {log_hazard}) for subject {subject}, class {class}")]
    NonFiniteHazard {
        subject: usize,
        class: usize,
        node: f64,
        log_hazard: f64,
    },

    #[error("subject {0} has no admissible class")]
    NoAdmissibleClass(usize),

    #[error("bad initialization: {0}")]
    BadInitialization(String),

    /// A kernel failed mid-chain.
    #[error("iteration {iteration}: {source}")]
    Chain {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("censoring calibration failed after {steps} bisection steps (realized rate {rate:.4})")]
    Censoring { steps: usize, rate: f64 },

    #[error("class count mismatch: fit has {fit}, truth has {truth}")]
    ClassMismatch { fit: usize, truth: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn data(subject: impl Into<String>, row: usize, message: impl Into<String>) -> Self {
        Error::Data {
            subject: subject.into(),
            row,
            message: message.into(),
        }
    }

    /// True for errors caused by the input data or configuration rather than
    /// numerical failure.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Data { .. }
                | Error::Config(_)
                | Error::Domain(_)
                | Error::DegenerateKnots(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::ClassMismatch { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
