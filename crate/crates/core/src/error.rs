use thiserror::Error;

use crate::sim::Nanos;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("event scheduled at {fire_time} ns but clock is already at {now} ns")]
    EventInPast { fire_time: Nanos, now: Nanos },
    #[error("die {die} of chip {chip} is busy until {busy_until} ns")]
    DieBusy {
        chip: usize,
        die: usize,
        busy_until: Nanos,
    },
    #[error("address out of range: {0}")]
    AddressOutOfRange(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("out of space: no free page on chip {chip} plane {plane}")]
    OutOfSpace { chip: usize, plane: usize },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("run produced no completed requests")]
    EmptyRun,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot read trace {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("trace {path}: {malformed} of {total} lines malformed (limit 1%)")]
    ParseQuality {
        path: String,
        malformed: usize,
        total: usize,
    },
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unsupported report format: {0}")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Top-level error for [`crate::run`] and [`crate::compare`].
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Report(#[from] ReportError),
}
