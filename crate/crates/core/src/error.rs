use thiserror::Error;

use crate::market::EventKind;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid market state: {0}")]
    InvalidState(String),

    #[error("{kind} by {delta} tick(s) would lock or cross the book at level {level}")]
    WouldCross { kind: EventKind, delta: u32, level: u32 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid event stream: {0}")]
    InvalidStream(String),

    #[error("intensity of {kind} evaluated negative ({value}) at t={t}")]
    NegativeIntensity { kind: EventKind, t: f64, value: f64 },

    #[error(
        "log-likelihood is -inf at every starting point: an event occurs where its own \
         intensity is zero (clean narrowing events recorded at the minimum spread)"
    )]
    NoFiniteStart,

    #[error("simulation exceeded the cap of {cap} events at t={t}")]
    Explosion { cap: usize, t: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{bad} of {total} rows are malformed (limit 5%)")]
    TooManyMalformed { bad: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
