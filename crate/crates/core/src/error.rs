use std::path::PathBuf;

use chrono::NaiveDate;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed row: {message}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate entry for ({lat}, {lon}, {date})")]
    DuplicateKey { lat: i16, lon: i16, date: NaiveDate },

    #[error("grid point ({lat}, {lon}) is not part of the supplied grid")]
    UnknownGridPoint { lat: i16, lon: i16 },

    #[error("grids do not match: {0}")]
    GridMismatch(String),

    #[error("no climatology value for month-day {month:02}-{day:02}")]
    UncoveredMonthDay { month: u32, day: u32 },

    #[error("month-day {month:02}-{day:02} has no observations in the base period")]
    EmptyMonthDay { month: u32, day: u32 },

    #[error("skill is undefined for a zero-norm anomaly vector ({side})")]
    ZeroNorm { side: &'static str },

    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("forecasts disagree on target date or horizon")]
    MismatchedForecasts,

    #[error("ensemble weights invalid: {0}")]
    InvalidWeights(String),

    #[error("empty training window for day-of-year {doy} with span {span}")]
    EmptyWindow { doy: u16, span: u16 },

    #[error("all training weights are zero")]
    AllZeroWeights,

    #[error("no evaluable hold-out dates for day-of-year {doy}")]
    NoEvaluableDates { doy: u16 },

    #[error("feature catalog error: {0}")]
    Catalog(String),

    #[error("unknown feature source '{0}' in dataset")]
    MissingSource(String),

    #[error("lag {lag} is shorter than the freshest admissible lag {freshest} for {horizon}")]
    LagTooShort {
        lag: i64,
        freshest: i64,
        horizon: &'static str,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid date '{0}' (expected YYYY-MM-DD)")]
    BadDate(String),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
