//! Trained networks as a top-down predictor for evaluation.

use std::path::Path;

use topdown_envgen::Episode;
use topdown_metrics::{Image, MetricError, TopDownPredictor};

use crate::checkpoint::{load_networks, CheckpointState};
use crate::data::{observation_volume, tensor_to_images};
use crate::gan::{to_unit, Networks, ScaleState};
use crate::Result;

pub struct ModelPredictor {
    pub networks: Networks,
    pub label: String,
    /// When set and larger than the model's scale, outputs are
    /// nearest-upsampled to this size.
    pub present_at: Option<i64>,
}

impl ModelPredictor {
    pub fn new(networks: Networks) -> Self {
        let label = networks.spec.encoder.to_string();
        Self {
            networks,
            label,
            present_at: None,
        }
    }

    pub fn from_checkpoint(dir: &Path) -> Result<(CheckpointState, Self)> {
        let (state, nets) = load_networks(dir)?;
        Ok((state, Self::new(nets)))
    }

    /// Fully faded-in state at the networks' current scale.
    pub fn state(&self) -> ScaleState {
        ScaleState {
            scale: self.networks.scale(),
            alpha: 1.0,
        }
    }

    pub fn predict_tensor(&self, samples: &[(&Episode, usize)]) -> Result<tch::Tensor> {
        let volume = observation_volume(samples)?;
        let out = tch::no_grad(|| self.networks.predict(&volume, self.state()))?;
        let out = match self.present_at {
            Some(size) if size > self.networks.scale() => out.upsample_nearest2d([size, size], None, None),
            _ => out,
        };
        Ok(to_unit(&out))
    }
}

impl TopDownPredictor for ModelPredictor {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn output_size(&self) -> u32 {
        self.present_at.unwrap_or(0).max(self.networks.scale()) as u32
    }

    fn known_nonlearning(&self) -> bool {
        self.networks.spec.encoder.known_nonlearning()
    }

    fn predict(&self, samples: &[(&Episode, usize)]) -> topdown_metrics::Result<Vec<Image>> {
        self.predict_tensor(samples)
            .and_then(|t| tensor_to_images(&t))
            .map_err(|e| MetricError::Predictor(e.to_string()))
    }
}
