//! Observation encoders, a progressively grown conditional WGAN-GP and the
//! training loop that maps first-person observation windows to top-down
//! views.
//!
//! All parameters live in one [`params::ParamStore`] keyed by name
//! (`enc.*`, `gen.*`, `disc.*`). Layers hold only names and scales.

pub mod capsule;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoders;
pub mod gan;
pub mod layers;
pub mod losses;
pub mod optim;
pub mod params;
pub mod predictor;
pub mod schedule;
pub mod seeds;
pub mod trainer;

pub use config::{parse_kv, Profile, TrainConfig};
pub use encoders::EncoderKind;
pub use gan::{ModelSpec, Networks, ScaleState};
pub use losses::{LossConfig, LossReport};
pub use predictor::ModelPredictor;
pub use schedule::{schedule_state, ScaleSchedule};
pub use trainer::{LogRow, Trainer};

/// Length of the state feature vector every encoder produces.
pub const FEATURE_DIM: i64 = 4096;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("config error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("data error: {0}")]
    Data(#[from] topdown_envgen::EnvGenError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NumericFault { iteration: u64, detail: String },
    #[error("torch error: {0}")]
    Tch(#[from] tch::TchError),
    #[error("metric error: {0}")]
    Metric(#[from] topdown_metrics::MetricError),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CoreError + '_ {
    move |source| CoreError::Io {
        path: path.display().to_string(),
        source,
    }
}
