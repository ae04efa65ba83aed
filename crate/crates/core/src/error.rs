use thiserror::Error;

/// Errors raised by the filter, its models and the file loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("likelihood field has no positive mass")]
    DegenerateField,

    #[error("recenter offset is not a whole number of cells: {0:?}")]
    OffGridShift([f64; 3]),

    #[error("grid size mismatch: expected {expected} cells, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("reference points {0} and {1} coincide")]
    CoincidentReferences(String, String),

    #[error("unknown reference point `{0}`")]
    UnknownReference(String),

    #[error("BSSD update needs at least two satellites, got {0}")]
    InsufficientSatellites(usize),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("GMM calibration failed: {0}")]
    CalibrationFailure(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("empty series")]
    EmptySeries,

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
