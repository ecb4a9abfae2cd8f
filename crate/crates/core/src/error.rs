use thiserror::Error;

/// Errors raised anywhere in the modeling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column: {0}")]
    MissingColumn(String),
    #[error("non-rectangular panel: {0}")]
    NonRectangularPanel(String),
    #[error("negative driver value {value} in column {column} (region {region}, week {week})")]
    NegativeDriver {
        column: String,
        region: String,
        week: String,
        value: f64,
    },
    #[error("negative kpi value {value} (region {region}, week {week})")]
    NegativeKpi {
        region: String,
        week: String,
        value: f64,
    },
    #[error("unparseable week label: {0:?}")]
    UnparseableWeek(String),
    #[error("unparseable number {value:?} in column {column}")]
    UnparseableNumber { column: String, value: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("invalid synthetic config: {0}")]
    InvalidSynthConfig(String),
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),
    #[error("size mismatch: expected {expected}, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("invalid burn-in {burn_in} for {weeks} weeks")]
    InvalidBurnIn { burn_in: usize, weeks: usize },
    #[error("forward trace does not match inputs: {0}")]
    TraceMismatch(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("degenerate target: total sum of squares is zero")]
    DegenerateTarget,
    #[error("degenerate curve data: {0}")]
    DegenerateData(String),
    #[error("invalid curve data: {0}")]
    InvalidCurveData(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
