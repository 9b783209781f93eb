use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: &'static str, reason: String },

    #[error("sample is empty")]
    EmptySample,

    #[error("invalid record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },

    #[error("bandwidth must be positive and finite, got {0}")]
    NonPositiveBandwidth(f64),

    #[error("no sample point within bandwidth {h} of x = {x}")]
    EmptyNeighborhood { x: f64, h: f64 },

    #[error("no uncensored observations")]
    NoUncensored,

    #[error("degenerate: all mass cured at x = {x} (estimated p = 0)")]
    AllCured { x: f64 },

    #[error("all covariate values are identical; pilot bandwidth undefined")]
    DegenerateCovariate,

    #[error("resampling failed at covariate {x}: {source}")]
    ResampleFit {
        x: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("every resample or trial failed at bandwidth {h}")]
    AllFitsFailed { h: f64 },

    #[error("t = {t} is beyond the support guard at x = {x} (1 - H = {survival:.3e})")]
    SupportGuard { t: f64, x: f64, survival: f64 },

    #[error("covariate density vanishes at x = {0}")]
    DegenerateDensity(f64),

    #[error("integrated squared bias is zero; bias-free degenerate bandwidth")]
    BiasFree,

    #[error("{path}: line {line}: {reason}")]
    Parse { path: String, line: u64, reason: String },

    #[error("{0}")]
    Schema(String),

    #[error("no records left after filtering")]
    EmptyAfterFilter,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            field,
            reason: reason.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument { .. } | Error::NonPositiveBandwidth(_) | Error::Json(_) => ErrorClass::Config,
            Error::EmptySample
            | Error::InvalidRecord { .. }
            | Error::Parse { .. }
            | Error::Schema(_)
            | Error::EmptyAfterFilter
            | Error::Io { .. }
            | Error::Csv(_) => ErrorClass::Data,
            Error::ResampleFit { source, .. } => source.class(),
            Error::EmptyNeighborhood { .. }
            | Error::NoUncensored
            | Error::AllCured { .. }
            | Error::DegenerateCovariate
            | Error::AllFitsFailed { .. }
            | Error::SupportGuard { .. }
            | Error::DegenerateDensity(_)
            | Error::BiasFree => ErrorClass::Numerical,
        }
    }
}
