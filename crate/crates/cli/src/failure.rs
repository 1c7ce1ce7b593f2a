use std::fmt;

use topdown_core::CoreError;
use topdown_envgen::EnvGenError;
use topdown_metrics::MetricError;

/// Command failure, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
    Numeric(String),
    Internal(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Numeric(_) => 4,
            Self::Internal(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "config error: {m}"),
            Self::Data(m) => write!(f, "data error: {m}"),
            Self::Numeric(m) => write!(f, "numeric fault: {m}"),
            Self::Internal(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<EnvGenError> for Failure {
    fn from(e: EnvGenError) -> Self {
        match e {
            EnvGenError::Config(_) | EnvGenError::IndexOutOfRange { .. } => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<MetricError> for Failure {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Param(_) | MetricError::ScaleMismatch { .. } => Self::Config(e.to_string()),
            MetricError::Data(inner) => inner.into(),
            MetricError::Predictor(_) => Self::Internal(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) | CoreError::Shape(_) => Self::Config(e.to_string()),
            CoreError::Data(inner) => inner.into(),
            CoreError::Metric(inner) => inner.into(),
            CoreError::NumericFault { .. } => Self::Numeric(e.to_string()),
            CoreError::Checkpoint(_) | CoreError::Io { .. } | CoreError::Json(_) => Self::Data(e.to_string()),
            CoreError::Tch(_) => Self::Internal(e.to_string()),
        }
    }
}

pub fn io_failure(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Data(format!("{}: {e}", path.display()))
}

pub type Outcome<T = ()> = std::result::Result<T, Failure>;
