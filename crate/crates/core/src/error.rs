use thiserror::Error;

/// Errors raised by the library. Each variant maps onto one failure class of
/// the command-line front end.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),
    #[error("mesh parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("kernel specification error: {0}")]
    Spec(String),
    #[error("pole: kernel evaluated at coincident points")]
    Pole,
    #[error("evaluation point lies on the boundary (distance {0:e})")]
    EvaluationPoint(f64),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("incompatible data: {functional} = {value:e} (tolerance {tol:e})")]
    Compatibility {
        functional: String,
        value: f64,
        tol: f64,
    },
    #[error("numerical rank deficiency: {0}")]
    NumericalRank(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("accuracy error: {0}")]
    Accuracy(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, Error>;
