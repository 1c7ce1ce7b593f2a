//! Progressive-growing schedule: output scale and fade-in weight as a pure
//! function of the iteration.

use serde::{Deserialize, Serialize};

use crate::gan::{level_of, ScaleState, START_SCALE};
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleSchedule {
    pub final_scale: i64,
    pub iterations_per_scale: u64,
    pub fade_iterations: u64,
}

impl Default for ScaleSchedule {
    fn default() -> Self {
        Self {
            final_scale: 64,
            iterations_per_scale: 25_000,
            fade_iterations: 12_500,
        }
    }
}

impl ScaleSchedule {
    pub fn validate(&self) -> Result<()> {
        level_of(self.final_scale)?;
        if self.iterations_per_scale == 0 || self.fade_iterations == 0 {
            return Err(CoreError::Config("iterations_per_scale and fade_iterations must be positive".into()));
        }
        if self.fade_iterations > self.iterations_per_scale {
            return Err(CoreError::Config(format!(
                "fade_iterations ({}) exceeds iterations_per_scale ({})",
                self.fade_iterations, self.iterations_per_scale
            )));
        }
        Ok(())
    }

    fn final_stage(&self) -> u64 {
        (self.final_scale / START_SCALE).trailing_zeros() as u64
    }

    /// Iterations at which the networks grow.
    pub fn grow_iterations(&self) -> Vec<u64> {
        (1..=self.final_stage()).map(|k| k * self.iterations_per_scale).collect()
    }

    /// Every new block, the final one included, fades in linearly over
    /// `fade_iterations` from the iteration it is added; the 4x4 stage has
    /// nothing to fade from and starts at alpha 1.
    pub fn state(&self, iteration: u64) -> ScaleState {
        let stage = (iteration / self.iterations_per_scale).min(self.final_stage());
        let scale = START_SCALE << stage;
        let alpha = if stage == 0 {
            1.0
        } else {
            let offset = iteration - stage * self.iterations_per_scale;
            (offset as f64 / self.fade_iterations as f64).min(1.0)
        };
        ScaleState { scale, alpha }
    }
}

pub fn schedule_state(iteration: u64, schedule: &ScaleSchedule) -> ScaleState {
    schedule.state(iteration)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_schedule_grows_on_time() {
        let s = ScaleSchedule {
            final_scale: 16,
            iterations_per_scale: 10,
            fade_iterations: 5,
        };
        assert_eq!(s.grow_iterations(), vec![10, 20]);
        let scales: Vec<i64> = (0..40).map(|i| s.state(i).scale).collect();
        for i in 1..40 {
            let grew = scales[i] > scales[i - 1];
            assert_eq!(grew, i == 10 || i == 20, "iteration {i}");
        }
        assert_eq!(s.state(12).alpha, 0.4);
        assert_eq!(s.state(25).alpha, 1.0);
        assert_eq!(s.state(1000).scale, 16);
    }

    #[test]
    fn validation() {
        assert!(ScaleSchedule::default().validate().is_ok());
        let bad = ScaleSchedule {
            fade_iterations: 30_000,
            ..ScaleSchedule::default()
        };
        assert!(bad.validate().is_err());
        let bad = ScaleSchedule {
            final_scale: 48,
            ..ScaleSchedule::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn monotone(a in 0u64..200_000, b in 0u64..200_000) {
            let s = ScaleSchedule::default();
            let (lo, hi) = (a.min(b), a.max(b));
            let (x, y) = (s.state(lo), s.state(hi));
            prop_assert!(x.scale <= y.scale);
            if x.scale == y.scale {
                prop_assert!(x.alpha <= y.alpha);
            }
            prop_assert!((0.0..=1.0).contains(&x.alpha));
        }
    }
}
