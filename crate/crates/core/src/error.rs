use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite sample at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("packet overflow: stream already holds all {capacity} samples")]
    PacketOverflow { capacity: usize },

    #[error("incomplete packet: {seen} of {expected} samples pushed")]
    IncompletePacket { seen: usize, expected: usize },

    #[error("NMSE undefined for an all-zero reference")]
    UndefinedMetric,

    #[error("measurements are identically zero")]
    ZeroMeasurements,

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake_case identifier, used for machine-readable error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidDimensions(_) => "invalid_dimensions",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::PacketOverflow { .. } => "packet_overflow",
            Error::IncompletePacket { .. } => "incomplete_packet",
            Error::UndefinedMetric => "undefined_metric",
            Error::ZeroMeasurements => "zero_measurements",
            Error::NumericalFailure(_) => "numerical_failure",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
