//! Image quality metrics and the evaluation protocol.
//!
//! Images are `image::Rgb32FImage` in `[0, 1]`. PSNR uses every pixel and
//! channel; SSIM runs on BT.601 luma with an 11x11 Gaussian window.

pub mod evaluate;
pub mod quality;
pub mod stats;

pub use evaluate::{
    area_downsample, evaluate_model, frame_to_float, mean_target_image, reports_to_csv, reports_to_table,
    ConstantPredictor, EvalSampling, GroundTruthPredictor, MetricReport, SplitMetrics, TopDownPredictor,
    CSV_HEADER,
};
pub use quality::{luma, mse, psnr, ssim, ssim_plane, SsimParams};
pub use stats::{compensated_sum, mean_std, CompensatedSum};

pub type Image = image::Rgb32FImage;

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape((u32, u32), (u32, u32)),
    #[error("image {0}x{1} is smaller than the {2}x{2} window")]
    TooSmall(u32, u32, usize),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("nothing to evaluate: {0}")]
    Empty(String),
    #[error("model outputs {got}x{got} images, evaluation requires {want}x{want}")]
    ScaleMismatch { got: u32, want: u32 },
    #[error("predictor failed: {0}")]
    Predictor(String),
    #[error(transparent)]
    Data(#[from] topdown_envgen::EnvGenError),
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;
