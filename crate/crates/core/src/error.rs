use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
///
/// Variants are grouped by the CLI exit code they map to, see [`Error::exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parameter out of bounds: {0}")]
    Bounds(String),
    #[error("point lies outside the FFD box")]
    OutOfBox,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("point ({0}, {1}) lies outside the triangulated hull; PODI does not extrapolate")]
    Extrapolation(f64, f64),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("all error indicators are zero; no simplex to refine")]
    NoRefinement,
    #[error("solver did not converge in {iterations} sweeps (relative residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },
    #[error("least-squares fit on the overlap is numerically singular")]
    IllPosedFit,
    #[error("Schwarz iteration did not converge in {iterations} outer iterations (last change {last_change:.3e})")]
    SchwarzNonConvergence {
        iterations: usize,
        last_change: f64,
        history: Vec<f64>,
    },
    #[error("integrity error in {path}: {reason}")]
    Integrity { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Process exit code: 2 config, 3 numeric failure, 4 integrity.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Bounds(_)
            | Error::Domain(_)
            | Error::OutOfBox
            | Error::Shape(_)
            | Error::Index { .. }
            | Error::Extrapolation(..)
            | Error::Json { .. } => 2,
            Error::Degenerate(_)
            | Error::InsufficientData(_)
            | Error::NoRefinement
            | Error::Convergence { .. }
            | Error::IllPosedFit
            | Error::SchwarzNonConvergence { .. } => 3,
            Error::Integrity { .. } | Error::Io { .. } => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
