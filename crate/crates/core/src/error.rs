use thiserror::Error;

#[derive(Debug, Error)]
pub enum EitError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error(
        "electrodes {first} and {second} snap to the same boundary node {node}; mesh too coarse"
    )]
    ElectrodeCollision {
        first: usize,
        second: usize,
        node: usize,
    },

    #[error("non-positive conductivity {value} at element {element}")]
    NonPositiveConductivity { element: usize, value: f64 },

    #[error("matrix not positive definite: pivot {pivot} at row {row}")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("linear solve for drive pattern {drive} failed: relative residual {residual:e}")]
    DriveSolveFailed { drive: usize, residual: f64 },

    #[error("ADMM iteration {iteration} failed: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<EitError>,
    },

    #[error("sigma-update residual {residual:e} exceeds tolerance (diag range {min_diag:e}..{max_diag:e})")]
    SigmaUpdateResidual {
        residual: f64,
        min_diag: f64,
        max_diag: f64,
    },

    #[error("{0}")]
    Undefined(&'static str),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EitError> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> EitError {
    EitError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(EitError::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
