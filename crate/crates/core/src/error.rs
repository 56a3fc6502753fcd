use thiserror::Error;

use crate::sysmodel::SubsetId;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed input: shapes, schedules, arguments.
    Invalid,
    /// A numeric routine failed (factorization, convergence, cone membership).
    Numeric,
    /// A mathematical precondition of an operation does not hold.
    Precondition,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: String,
        found: String,
    },

    #[error("{what} is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { what: String, min_eigenvalue: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("the empty sensor set has no observation model")]
    EmptySubset,

    #[error("subset {id} refers to sensors beyond the {sensors} in the network")]
    SubsetOutOfRange { id: u32, sensors: usize },

    #[error("pair (C^{subset}, A) is not detectable: unstable modes {eigenvalues:?} are unobserved")]
    NotDetectable {
        subset: SubsetId,
        eigenvalues: Vec<(f64, f64)>,
    },

    #[error("pair (A, Q^1/2) is not stabilizable")]
    NotStabilizable,

    #[error("subset {0} is not a detectable atom of the schedule")]
    NotInDetectableSet(SubsetId),

    #[error("no atom of the schedule is detectable (schedule is not weakly detectable)")]
    NotWeaklyDetectable,

    #[error("fixed-point iteration did not converge in {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty sample")]
    EmptySample,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::DimensionMismatch { .. }
            | Error::InvalidSchedule(_)
            | Error::SubsetOutOfRange { .. }
            | Error::InvalidArgument(_)
            | Error::EmptySample => ErrorKind::Invalid,
            Error::NotPositiveDefinite { .. }
            | Error::NotPsd { .. }
            | Error::NonFinite(_)
            | Error::NoConvergence { .. } => {
                ErrorKind::Numeric
            }
            Error::EmptySubset
            | Error::NotDetectable { .. }
            | Error::NotStabilizable
            | Error::NotInDetectableSet(_)
            | Error::NotWeaklyDetectable => ErrorKind::Precondition,
            Error::AtStep { source, .. } => source.kind(),
        }
    }

    pub(crate) fn dims(context: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }
}
