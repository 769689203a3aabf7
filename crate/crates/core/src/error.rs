use thiserror::Error;

/// Errors produced anywhere in the calibration pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("profiles live on different grids")]
    GridMismatch,

    #[error("degenerate density: {0}")]
    DegenerateDensity(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("regularization parameter must be positive, got {0}")]
    NonPositiveAlpha(f64),

    #[error("CFL violated: dt * max g = {courant:.3e} exceeds dx = {dx:.3e}")]
    CflViolation { courant: f64, dx: f64 },

    #[error("solution blew up at t = {time}")]
    BlowUp { time: f64 },

    #[error("eigen iteration did not converge: {0}")]
    NonConverged(String),

    #[error("alpha sweep is empty")]
    EmptySweep,

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("volumes are not strictly increasing at line {line}")]
    NonMonotoneVolumes { line: usize },

    #[error("missing metadata: {0}")]
    MissingMetadata(String),

    #[error("bad range: {0}")]
    BadRange(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
