//! Observation windows `s_i` and their channel-stacked form.
//!
//! Frames are ordered oldest first with the current observation last. Steps
//! before the start of the episode are filled with all-zero blank frames.

use crate::episode::Episode;
use crate::{EnvGenError, Frame, Result, IMAGE_SIZE, WINDOW};

/// Channels of the stacked conditioning image.
pub const STACKED_CHANNELS: usize = 3 * WINDOW;

/// The padded window of the current and previous 20 frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    frames: Vec<Frame>,
    valid_count: usize,
}

pub fn blank_frame() -> Frame {
    Frame::new(IMAGE_SIZE as u32, IMAGE_SIZE as u32)
}

impl ObservationSet {
    /// Builds a window from at most 21 trailing frames, left-padding with blanks.
    pub fn from_recent(recent: &[Frame]) -> Result<Self> {
        if recent.is_empty() || recent.len() > WINDOW {
            return Err(EnvGenError::Shape {
                expected: format!("1..={WINDOW} frames"),
                got: recent.len().to_string(),
            });
        }
        if let Some(f) = recent.iter().find(|f| f.dimensions() != (IMAGE_SIZE as u32, IMAGE_SIZE as u32)) {
            return Err(EnvGenError::Shape {
                expected: format!("{IMAGE_SIZE}x{IMAGE_SIZE} frames"),
                got: format!("{:?}", f.dimensions()),
            });
        }
        let mut frames = vec![blank_frame(); WINDOW - recent.len()];
        frames.extend_from_slice(recent);
        Ok(Self {
            frames,
            valid_count: recent.len(),
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    /// The current observation.
    pub fn current(&self) -> &Frame {
        &self.frames[WINDOW - 1]
    }

    /// Number of non-blank frames, in `1..=21`.
    pub fn valid_count(&self) -> usize {
        self.valid_count
    }

    /// Appends the window as a `(21, 3, 64, 64)` float volume in `[0, 1]`.
    pub fn write_volume_chw(&self, out: &mut Vec<f32>) {
        let n = IMAGE_SIZE * IMAGE_SIZE;
        for frame in &self.frames {
            let raw = frame.as_raw();
            for ch in 0..3 {
                out.extend((0..n).map(|i| f32::from(raw[i * 3 + ch]) / 255.0));
            }
        }
    }
}

/// `s_i` for step `i` of an episode.
pub fn make_observation_set(episode: &Episode, i: usize) -> Result<ObservationSet> {
    if i >= episode.len() {
        return Err(EnvGenError::IndexOutOfRange {
            index: i,
            len: episode.len(),
        });
    }
    let start = (i + 1).saturating_sub(WINDOW);
    ObservationSet::from_recent(&episode.frames[start..=i])
}

/// 64x64x63 image, HWC layout; channel `3j + k` is channel `k` of frame `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedImage {
    data: Vec<f32>,
}

impl StackedImage {
    pub fn shape(&self) -> (usize, usize, usize) {
        (IMAGE_SIZE, IMAGE_SIZE, STACKED_CHANNELS)
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * IMAGE_SIZE + col) * STACKED_CHANNELS + channel]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

pub fn stack_channels(set: &ObservationSet) -> StackedImage {
    let mut data = vec![0.0f32; IMAGE_SIZE * IMAGE_SIZE * STACKED_CHANNELS];
    for (j, frame) in set.frames.iter().enumerate() {
        for (idx, px) in frame.as_raw().chunks_exact(3).enumerate() {
            for k in 0..3 {
                data[idx * STACKED_CHANNELS + 3 * j + k] = f32::from(px[k]) / 255.0;
            }
        }
    }
    StackedImage { data }
}

/// Recovers the 21 frames of a stacked image.
pub fn unstack(stacked: &StackedImage) -> Vec<Frame> {
    (0..WINDOW)
        .map(|j| {
            Frame::from_fn(IMAGE_SIZE as u32, IMAGE_SIZE as u32, |x, y| {
                let base = (y as usize * IMAGE_SIZE + x as usize) * STACKED_CHANNELS + 3 * j;
                image::Rgb([0, 1, 2].map(|k| (stacked.data[base + k] * 255.0).round() as u8))
            })
        })
        .collect()
}
