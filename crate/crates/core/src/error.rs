use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("regressor density {density:e} at the query point is below the floor {floor:e}")]
    DensityTooSmall { density: f64, floor: f64 },

    #[error("conditional CDF never reaches tau = {tau} on the search interval")]
    QuantileNotBracketed { tau: f64 },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("every regressor point is degenerate at y = {y}")]
    AllPointsDegenerate { y: f64 },

    #[error("{value} lies outside the range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("1/lambda is singular between {from} and {to}")]
    SingularityInRange { from: f64, to: f64 },

    #[error("lambda has no sign change on its grid")]
    NoRoot,

    #[error("bad anchors: {0}")]
    BadAnchors(String),

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("residual denominator vanishes for observation {index}")]
    DegenerateDenominator { index: usize },

    #[error("no observation falls inside the regressor region")]
    EmptyRegion,

    #[error("criterion could not be evaluated at any candidate exponent")]
    AllDegenerate,

    #[error("cannot construct a region satisfying the checks: {0}")]
    CannotSatisfy(String),

    #[error("operation supports only a one-dimensional regressor, got d = {0}")]
    UnsupportedDimension(usize),

    #[error("renormalization pins give identical transformation values")]
    DegeneratePins,

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("usage: {0}")]
    Usage(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl Error {
    /// Variant name, used to tally failures.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInput",
            Error::DensityTooSmall { .. } => "DensityTooSmall",
            Error::QuantileNotBracketed { .. } => "QuantileNotBracketed",
            Error::DegenerateSample(_) => "DegenerateSample",
            Error::InsufficientData { .. } => "InsufficientData",
            Error::AllPointsDegenerate { .. } => "AllPointsDegenerate",
            Error::OutOfRange { .. } => "OutOfRange",
            Error::SingularityInRange { .. } => "SingularityInRange",
            Error::NoRoot => "NoRoot",
            Error::BadAnchors(_) => "BadAnchors",
            Error::DivisionByZero(_) => "DivisionByZero",
            Error::DegenerateDenominator { .. } => "DegenerateDenominator",
            Error::EmptyRegion => "EmptyRegion",
            Error::AllDegenerate => "AllDegenerate",
            Error::CannotSatisfy(_) => "CannotSatisfy",
            Error::UnsupportedDimension(_) => "UnsupportedDimension",
            Error::DegeneratePins => "DegeneratePins",
            Error::Parse { .. } => "Parse",
            Error::Usage(_) => "Usage",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
