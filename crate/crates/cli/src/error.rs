//! Mapping from failures to process exit codes.

use hvalign::filterlearn::LearnError;
use hvalign::{FilterError, IngestError, MetricsError, OracleError, ParetoError, PsychophysError};

pub const USAGE: u8 = 2;
pub const DATA: u8 = 3;
pub const NUMERIC: u8 = 4;
pub const CAPACITY: u8 = 5;

/// Errors raised by the front-end itself.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    /// A `--verify` check disagreed with the reference computation.
    Verification(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(msg) => write!(f, "{msg}"),
            Self::Verification(msg) => write!(f, "verification failed: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    CliError::Usage(msg.into()).into()
}

pub fn verification(msg: impl Into<String>) -> anyhow::Error {
    CliError::Verification(msg.into()).into()
}

fn metrics(e: &MetricsError) -> u8 {
    match e {
        MetricsError::UndefinedKappa
        | MetricsError::UndefinedCondition { .. }
        | MetricsError::NothingToAggregate
        | MetricsError::UndefinedShapeBias => NUMERIC,
        _ => DATA,
    }
}

fn filter(e: &FilterError) -> u8 {
    match e {
        FilterError::Parameter(_) => USAGE,
        _ => DATA,
    }
}

fn learn(e: &LearnError) -> u8 {
    match e {
        LearnError::Config(_) => USAGE,
        LearnError::Diverged { .. } | LearnError::NonFinite { .. } => NUMERIC,
        LearnError::Filter(e) => filter(e),
        LearnError::Metrics(e) => metrics(e),
        _ => DATA,
    }
}

/// Exit code for the first library error found in the chain; 1 when there is
/// none (for instance a failed write).
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Usage(_) => USAGE,
                CliError::Verification(_) => NUMERIC,
            };
        }
        if cause.is::<IngestError>() {
            return DATA;
        }
        if let Some(e) = cause.downcast_ref::<MetricsError>() {
            return metrics(e);
        }
        if let Some(e) = cause.downcast_ref::<ParetoError>() {
            return match e {
                ParetoError::Capacity { .. } => CAPACITY,
                ParetoError::NoAchievablePoint { .. } => NUMERIC,
                ParetoError::MissingCondition { .. } => DATA,
                ParetoError::Metrics(e) => metrics(e),
            };
        }
        if let Some(e) = cause.downcast_ref::<PsychophysError>() {
            return match e {
                PsychophysError::Parameter(_) => USAGE,
                _ => NUMERIC,
            };
        }
        if let Some(e) = cause.downcast_ref::<FilterError>() {
            return filter(e);
        }
        if let Some(e) = cause.downcast_ref::<LearnError>() {
            return learn(e);
        }
        if let Some(e) = cause.downcast_ref::<OracleError>() {
            return match e {
                OracleError::Budget { .. } => CAPACITY,
                OracleError::NonFinite { .. } => NUMERIC,
                OracleError::MissingCondition(_) => DATA,
            };
        }
    }
    1
}
