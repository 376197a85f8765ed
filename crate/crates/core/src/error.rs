use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input series")]
    EmptyInput,

    #[error("series too short: need at least {required} observations, got {actual}")]
    TooShort { required: usize, actual: usize },

    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),

    #[error("sample carries no true innovations")]
    MissingInnovations,

    #[error("grid is not sorted ascending")]
    UnsortedGrid,

    #[error("estimating equation has constant sign on [-{scan_bound}, {scan_bound}]")]
    NoRootInWindow { pilot: f64, scan_bound: f64 },

    #[error("integral of g dPsi vanishes ({0:e}); asymptotic variance undefined")]
    DegenerateScore(f64),

    #[error("failure rate {rate:.3} exceeds the allowed maximum ({failures} of {replications})")]
    TooManyFailures {
        failures: usize,
        replications: usize,
        rate: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
