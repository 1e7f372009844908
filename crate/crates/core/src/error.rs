use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by mesh construction, operators, solvers and analyses.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("not a closed surface: edge ({0}, {1}) has a single incident triangle")]
    BoundaryEdge(usize, usize),

    #[error("non-manifold: edge ({0}, {1}) has {2} incident triangles")]
    NonManifoldEdge(usize, usize, usize),

    #[error("orientation failure: edge ({0}, {1}) is traversed in the same direction by both incident triangles")]
    Orientation(usize, usize),

    #[error("degenerate triangle {0} (area {1:e})")]
    DegenerateTriangle(usize, f64),

    #[error("vertex index {index} out of range in triangle {triangle} ({count} vertices)")]
    IndexOutOfRange {
        triangle: usize,
        index: usize,
        count: usize,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("field length {got} does not match {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("iterative solver did not converge: {0}")]
    NoConvergence(String),

    #[error("time step rejected at t = {t}: fixed-point residual {residual:e} after {iterations} iterations; try dt = {suggested_dt:e}")]
    StepRejected {
        t: f64,
        residual: f64,
        iterations: usize,
        suggested_dt: f64,
    },

    #[error("bisection failed: {0}")]
    Bracket(String),

    #[error("{0}")]
    Analysis(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
