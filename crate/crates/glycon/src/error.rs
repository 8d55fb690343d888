use thiserror::Error;

use crate::identify::FitResult;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model parameter {name}: {value} ({reason})")]
    InvalidParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("negative time step dt = {0}")]
    NegativeDt(f64),

    #[error("measurement times must be sorted strictly ascending (index {index})")]
    UnsortedTimes { index: usize },

    #[error("schedule does not cover [{needed_start}, {needed_end}] (covers [{start}, {horizon}])")]
    ScheduleGap {
        needed_start: f64,
        needed_end: f64,
        start: f64,
        horizon: f64,
    },

    #[error("invalid rate schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid glucose trace: {0}")]
    InvalidTrace(String),

    #[error("covariance not positive definite even after jitter (pivot {pivot} at index {index})")]
    SingularCovariance { index: usize, pivot: f64 },

    #[error("training window has {n} measurements; at least {min} required")]
    InsufficientData { n: usize, min: usize },

    #[error("training window has no strictly positive insulin interval")]
    NoInsulinExposure,

    #[error("all optimizer restarts diverged")]
    FitDiverged { best: Box<FitResult> },

    #[error("system is uncontrollable: input coefficient b = 0")]
    Uncontrollable,

    #[error("controller has no insulin authority: beta_i = 0")]
    NoAuthority,

    #[error("protocol table invalid: {0}")]
    InvalidProtocol(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("statistics: {0}")]
    Stats(String),

    #[error("{path}:{line}: {msg}")]
    CsvRecord {
        path: String,
        line: u64,
        msg: String,
    },

    #[error("virtual patient {patient} integration produced non-finite state at t = {time} hr")]
    IntegrationBlowup { patient: u64, time: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
