//! Synthetic data for top-down view synthesis.
//!
//! A world is a square room with a handful of colored boxes and an agent
//! standing somewhere on the floor. The agent turns in place and records
//! 64x64 first-person frames through a column raycaster; for every step we
//! also keep the cumulative ground-projected visibility and the top-down map
//! masked by it.
//!
//! ```text
//! seed ──> EnvironmentSpec ──simulate_episode──> Episode ──write_dataset──> disk
//!                                                   │
//!                                                   └──> ObservationSet (21 frames) ──> StackedImage (63 ch)
//! ```

pub mod dataset;
pub mod env;
pub mod episode;
pub mod geometry;
pub mod obs;
pub mod render;

pub use dataset::{
    generate_dataset, read_dataset, write_dataset, Dataset, DatasetConfig, EpisodeEntry, Manifest,
    Split, SplitManifest,
};
pub use env::{sample_environment, EnvironmentSpec, GenConfig, ObjectBox, Rgb8};
pub use episode::{simulate_episode, Episode, Pose, RotationPolicy, VisibilityGrid};
pub use obs::{make_observation_set, stack_channels, unstack, ObservationSet, StackedImage};
pub use render::{render_first_person, render_topdown, render_topdown_with_agent, RenderConfig};

/// Side length of every first-person frame and top-down map.
pub const IMAGE_SIZE: usize = 64;

/// Frames in an observation window: the current one plus the previous 20.
pub const WINDOW: usize = 21;

pub type Frame = image::RgbImage;

#[derive(Debug, thiserror::Error)]
pub enum EnvGenError {
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("could not place {what} after {attempts} attempts")]
    Placement { what: String, attempts: usize },
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("step index {index} out of range for episode of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("corrupt dataset: {0}")]
    Corrupt(String),
    #[error("checksum mismatch for {path}: manifest {expected}, computed {actual}")]
    Checksum {
        path: String,
        expected: String,
        actual: String,
    },
    #[error("image codec error for {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
}

pub type Result<T, E = EnvGenError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> EnvGenError + '_ {
    move |source| EnvGenError::Io {
        path: path.display().to_string(),
        source,
    }
}
