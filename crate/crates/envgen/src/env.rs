use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{EnvGenError, Result, IMAGE_SIZE};

/// 8-bit RGB color. Everything the renderers emit is built from these so
/// that PNG round trips are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb8(pub [u8; 3]);

impl Rgb8 {
    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Self([r, g, b])
    }

    /// Channels mapped to `[0, 1]`.
    pub fn to_unit(self) -> [f32; 3] {
        self.0.map(|c| f32::from(c) / 255.0)
    }

    /// Multiplies every channel by `factor` and rounds; used for face shading.
    pub fn shade(self, factor: f64) -> Self {
        Self(self.0.map(|c| (f64::from(c) * factor).round().clamp(0.0, 255.0) as u8))
    }
}

impl From<Rgb8> for image::Rgb<u8> {
    fn from(c: Rgb8) -> Self {
        image::Rgb(c.0)
    }
}

/// Fill for top-down cells that have never been inside a view frustum.
pub const UNKNOWN_COLOR: Rgb8 = Rgb8::new(128, 128, 128);
pub const AGENT_COLOR: Rgb8 = Rgb8::new(255, 255, 255);
pub const SKY_COLOR: Rgb8 = Rgb8::new(150, 185, 225);

pub const DEFAULT_PALETTE: [Rgb8; 8] = [
    Rgb8::new(220, 40, 40),
    Rgb8::new(40, 180, 60),
    Rgb8::new(40, 80, 220),
    Rgb8::new(230, 210, 40),
    Rgb8::new(200, 50, 200),
    Rgb8::new(40, 200, 210),
    Rgb8::new(240, 140, 30),
    Rgb8::new(120, 60, 180),
];

pub const DEFAULT_FLOOR_COLORS: [Rgb8; 3] = [
    Rgb8::new(205, 195, 170),
    Rgb8::new(175, 175, 160),
    Rgb8::new(160, 125, 95),
];

pub const DEFAULT_WALL_COLORS: [Rgb8; 3] = [
    Rgb8::new(85, 85, 110),
    Rgb8::new(110, 75, 65),
    Rgb8::new(65, 100, 85),
];

/// Parameters of the procedural room generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub room_size: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub half_extent_range: (f64, f64),
    pub height_range: (f64, f64),
    pub wall_height: f64,
    pub agent_height: f64,
    /// Minimum gap between boxes, and between a box and the agent.
    pub clearance: f64,
    pub palette: Vec<Rgb8>,
    pub floor_colors: Vec<Rgb8>,
    pub wall_colors: Vec<Rgb8>,
    pub max_attempts: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            room_size: 16.0,
            min_objects: 2,
            max_objects: 5,
            half_extent_range: (0.6, 1.5),
            height_range: (0.5, 2.0),
            wall_height: 2.5,
            agent_height: 1.0,
            clearance: 0.5,
            palette: DEFAULT_PALETTE.to_vec(),
            floor_colors: DEFAULT_FLOOR_COLORS.to_vec(),
            wall_colors: DEFAULT_WALL_COLORS.to_vec(),
            max_attempts: 1000,
        }
    }
}

impl GenConfig {
    /// Width of one top-down cell in world units.
    pub fn cell_size(&self) -> f64 {
        self.room_size / IMAGE_SIZE as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(EnvGenError::Config(msg));
        if !(self.room_size.is_finite() && self.room_size > 0.0) {
            return bad(format!("room_size must be positive, got {}", self.room_size));
        }
        if !(2 <= self.min_objects && self.min_objects <= self.max_objects && self.max_objects <= 5) {
            return bad(format!(
                "object count range must satisfy 2 <= min <= max <= 5, got {}..={}",
                self.min_objects, self.max_objects
            ));
        }
        let (lo, hi) = self.half_extent_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("bad half_extent_range {lo}..{hi}"));
        }
        let (lo, hi) = self.height_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("bad height_range {lo}..{hi}"));
        }
        if !(self.wall_height > 0.0 && self.agent_height > 0.0 && self.clearance >= 0.0) {
            return bad("wall_height and agent_height must be positive".into());
        }
        let mut palette = self.palette.clone();
        palette.sort_by_key(|c| c.0);
        palette.dedup();
        if palette.len() < 6 {
            return bad(format!("palette needs at least 6 distinct colors, got {}", palette.len()));
        }
        if self.floor_colors.is_empty() || self.wall_colors.is_empty() {
            return bad("floor and wall color lists must be nonempty".into());
        }
        let reserved: Vec<Rgb8> = [UNKNOWN_COLOR, AGENT_COLOR]
            .into_iter()
            .chain(self.floor_colors.iter().copied())
            .chain(self.wall_colors.iter().copied())
            .collect();
        if let Some(c) = palette.iter().find(|c| reserved.contains(c)) {
            return bad(format!("palette color {:?} collides with a reserved color", c.0));
        }
        if self.floor_colors.iter().any(|c| self.wall_colors.contains(c))
            || [UNKNOWN_COLOR, AGENT_COLOR]
                .iter()
                .any(|c| self.floor_colors.contains(c) || self.wall_colors.contains(c))
        {
            return bad("floor, wall, unknown and agent colors must be pairwise distinct".into());
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be at least 1".into());
        }
        Ok(())
    }
}

/// Axis-aligned box standing on the floor with a square footprint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectBox {
    pub center: [f64; 2],
    pub half_extent: f64,
    pub height: f64,
    pub color: Rgb8,
}

impl ObjectBox {
    pub fn min(&self) -> [f64; 2] {
        [self.center[0] - self.half_extent, self.center[1] - self.half_extent]
    }

    pub fn max(&self) -> [f64; 2] {
        [self.center[0] + self.half_extent, self.center[1] + self.half_extent]
    }

    /// Closed containment test for a floor point.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (p[0] - self.center[0]).abs() <= self.half_extent
            && (p[1] - self.center[1]).abs() <= self.half_extent
    }
}

/// A generated room. World coordinates are `(x, z)` with the room spanning
/// `[0, room_size]^2`; in top-down images `x` runs along columns and `z`
/// along rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub seed: u64,
    pub room_size: f64,
    pub wall_height: f64,
    pub wall_color: Rgb8,
    pub floor_color: Rgb8,
    pub objects: Vec<ObjectBox>,
    pub agent_position: [f64; 2],
    pub agent_height: f64,
}

impl EnvironmentSpec {
    pub fn cell_size(&self) -> f64 {
        self.room_size / IMAGE_SIZE as f64
    }

    /// True when `p` is on the floor: inside the walls and outside all boxes.
    pub fn is_free(&self, p: [f64; 2]) -> bool {
        p.iter().all(|&v| v > 0.0 && v < self.room_size) && !self.objects.iter().any(|o| o.contains(p))
    }
}

/// Deterministically samples a room from `seed`.
pub fn sample_environment(seed: u64, config: &GenConfig) -> Result<EnvironmentSpec> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Keep everything off the outermost ring of top-down cells, which is
    // where the walls are drawn.
    let lo = config.cell_size() + config.clearance;
    let hi = config.room_size - config.cell_size() - config.clearance;
    if lo >= hi {
        return Err(EnvGenError::Placement {
            what: "agent".into(),
            attempts: 0,
        });
    }

    let wall_color = *config.wall_colors.choose(&mut rng).expect("validated nonempty");
    let floor_color = *config.floor_colors.choose(&mut rng).expect("validated nonempty");
    let agent_position = [rng.gen_range(lo..hi), rng.gen_range(lo..hi)];
    let count = rng.gen_range(config.min_objects..=config.max_objects);

    let mut palette = config.palette.clone();
    palette.sort_by_key(|c| c.0);
    palette.dedup();
    palette.shuffle(&mut rng);

    let mut objects: Vec<ObjectBox> = Vec::with_capacity(count);
    for (index, &color) in palette.iter().take(count).enumerate() {
        let mut placed = None;
        for _ in 0..config.max_attempts {
            let (hlo, hhi) = config.half_extent_range;
            let half_extent = if hlo < hhi { rng.gen_range(hlo..=hhi) } else { hlo };
            let (ylo, yhi) = config.height_range;
            let height = if ylo < yhi { rng.gen_range(ylo..=yhi) } else { ylo };
            let (clo, chi) = (lo + half_extent, hi - half_extent);
            if clo >= chi {
                continue;
            }
            let center = [rng.gen_range(clo..chi), rng.gen_range(clo..chi)];
            let reach = half_extent + config.clearance;
            let clear_of_agent = (agent_position[0] - center[0]).abs() > reach
                || (agent_position[1] - center[1]).abs() > reach;
            let clear_of_others = objects.iter().all(|o| {
                let gap = half_extent + o.half_extent + config.clearance;
                (o.center[0] - center[0]).abs() >= gap || (o.center[1] - center[1]).abs() >= gap
            });
            if clear_of_agent && clear_of_others {
                placed = Some(ObjectBox {
                    center,
                    half_extent,
                    height,
                    color,
                });
                break;
            }
        }
        match placed {
            Some(o) => objects.push(o),
            None => {
                return Err(EnvGenError::Placement {
                    what: format!("object {index}"),
                    attempts: config.max_attempts,
                })
            }
        }
    }

    Ok(EnvironmentSpec {
        seed,
        room_size: config.room_size,
        wall_height: config.wall_height,
        wall_color,
        floor_color,
        objects,
        agent_position,
        agent_height: config.agent_height,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bytes() {
        let cfg = GenConfig::default();
        let a = sample_environment(7, &cfg).unwrap();
        let b = sample_environment(7, &cfg).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    }

    #[test]
    fn neighbouring_seeds_differ() {
        let cfg = GenConfig::default();
        for seed in 0..50 {
            let a = sample_environment(seed, &cfg).unwrap();
            let b = sample_environment(seed + 1, &cfg).unwrap();
            let differs = a.objects.len() != b.objects.len()
                || a.objects.iter().zip(&b.objects).any(|(x, y)| x != y);
            assert!(differs, "seeds {seed} and {} produced identical objects", seed + 1);
        }
    }

    #[test]
    fn oversized_objects_fail_to_place() {
        let cfg = GenConfig {
            half_extent_range: (9.0, 10.0),
            ..GenConfig::default()
        };
        match sample_environment(7, &cfg) {
            Err(EnvGenError::Placement { .. }) => {}
            other => panic!("expected placement error, got {other:?}"),
        }
    }

    #[test]
    fn crowded_room_fails_instead_of_looping() {
        let cfg = GenConfig {
            room_size: 6.0,
            min_objects: 5,
            max_objects: 5,
            half_extent_range: (1.0, 1.0),
            max_attempts: 200,
            ..GenConfig::default()
        };
        assert!(matches!(sample_environment(1, &cfg), Err(EnvGenError::Placement { .. })));
    }

    #[test]
    fn config_validation() {
        let small_palette = GenConfig {
            palette: DEFAULT_PALETTE[..5].to_vec(),
            ..GenConfig::default()
        };
        assert!(matches!(small_palette.validate(), Err(EnvGenError::Config(_))));
        let too_many = GenConfig {
            max_objects: 6,
            ..GenConfig::default()
        };
        assert!(too_many.validate().is_err());
        let clash = GenConfig {
            palette: [&DEFAULT_PALETTE[..6], &[UNKNOWN_COLOR]].concat(),
            ..GenConfig::default()
        };
        assert!(clash.validate().is_err());
    }

    #[test]
    fn invariants_hold_on_many_seeds() {
        let cfg = GenConfig::default();
        let margin = cfg.cell_size();
        for seed in 0..200 {
            let env = sample_environment(seed, &cfg).unwrap();
            assert!((2..=5).contains(&env.objects.len()));
            assert!(env.is_free(env.agent_position));
            for (i, o) in env.objects.iter().enumerate() {
                assert!(o.min().iter().all(|&v| v > margin));
                assert!(o.max().iter().all(|&v| v < env.room_size - margin));
                assert!(!o.contains(env.agent_position));
                for p in &env.objects[i + 1..] {
                    let sep = (o.center[0] - p.center[0]).abs() >= o.half_extent + p.half_extent
                        || (o.center[1] - p.center[1]).abs() >= o.half_extent + p.half_extent;
                    assert!(sep);
                    assert_ne!(o.color, p.color);
                }
            }
        }
    }
}
