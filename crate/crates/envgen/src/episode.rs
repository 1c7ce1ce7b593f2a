use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::EnvironmentSpec;
use crate::geometry::{angle_diff, cell_center, cell_of, normalize_angle, segment_hits_box};
use crate::render::{render_first_person, render_topdown_with_agent, RenderConfig};
use crate::{EnvGenError, Frame, Result, IMAGE_SIZE};

/// Agent pose on the floor; `yaw` is kept in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 2],
    pub yaw: f64,
}

impl Pose {
    pub fn new(position: [f64; 2], yaw: f64) -> Self {
        Self {
            position,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn forward(&self) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [c, s]
    }
}

/// How the agent moves between steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RotationPolicy {
    /// Turn by a constant angle each step.
    FixedIncrement { increment: f64 },
    /// Turn by an angle drawn uniformly from `[-max_increment, max_increment]`.
    RandomTurn { max_increment: f64 },
    /// Random turn followed by a forward step when the destination is free.
    RandomWalk { max_turn: f64, step: f64 },
}

impl Default for RotationPolicy {
    fn default() -> Self {
        Self::FixedIncrement { increment: TAU / 20.0 }
    }
}

/// Square boolean grid aligned with top-down image cells, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityGrid {
    size: usize,
    cells: Vec<bool>,
}

impl VisibilityGrid {
    pub fn with_size(size: usize, value: bool) -> Self {
        Self {
            size,
            cells: vec![value; size * size],
        }
    }

    pub fn filled(value: bool) -> Self {
        Self::with_size(IMAGE_SIZE, value)
    }

    pub fn from_cells(size: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != size * size {
            return Err(EnvGenError::Shape {
                expected: format!("{} cells", size * size),
                got: cells.len().to_string(),
            });
        }
        Ok(Self { size, cells })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.size + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.cells[row * self.size + col] = value;
    }

    pub fn union_with(&mut self, other: &VisibilityGrid) {
        for (a, &b) in self.cells.iter_mut().zip(&other.cells) {
            *a |= b;
        }
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&v| v).count()
    }

    pub fn is_subset_of(&self, other: &VisibilityGrid) -> bool {
        self.size == other.size && self.cells.iter().zip(&other.cells).all(|(&a, &b)| !a || b)
    }
}

/// Ground projection of one view frustum: cells inside the horizontal FOV
/// wedge whose centers are in line of sight. A cell inside a box is seen when
/// no *other* box blocks it. The agent's own cell is always visible.
pub fn frustum_visibility(env: &EnvironmentSpec, pose: &Pose, cfg: &RenderConfig) -> VisibilityGrid {
    let mut grid = VisibilityGrid::filled(false);
    let half_fov = cfg.half_fov();
    let p = pose.position;
    let own = cell_of(env, p);
    for row in 0..IMAGE_SIZE {
        for col in 0..IMAGE_SIZE {
            if (row, col) == own {
                grid.set(row, col, true);
                continue;
            }
            let q = cell_center(env, row, col);
            let bearing = (q[1] - p[1]).atan2(q[0] - p[0]);
            if angle_diff(bearing, pose.yaw).abs() > half_fov {
                continue;
            }
            let blocked = env
                .objects
                .iter()
                .any(|o| !o.contains(q) && segment_hits_box(p, q, o));
            grid.set(row, col, !blocked);
        }
    }
    grid
}

/// One rollout: frames, poses, cumulative visibility and masked targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub env: EnvironmentSpec,
    pub episode_seed: u64,
    pub frames: Vec<Frame>,
    pub poses: Vec<Pose>,
    pub visibility: Vec<VisibilityGrid>,
    pub targets: Vec<Frame>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Rolls out `steps` observations from the environment's agent position.
/// The initial heading and any random turns come from `episode_seed`.
pub fn simulate_episode(
    env: &EnvironmentSpec,
    steps: usize,
    policy: RotationPolicy,
    episode_seed: u64,
    cfg: &RenderConfig,
) -> Result<Episode> {
    if steps == 0 {
        return Err(EnvGenError::Config("episode length must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
    let mut pose = Pose::new(env.agent_position, rng.gen_range(0.0..TAU));

    let mut episode = Episode {
        env: env.clone(),
        episode_seed,
        frames: Vec::with_capacity(steps),
        poses: Vec::with_capacity(steps),
        visibility: Vec::with_capacity(steps),
        targets: Vec::with_capacity(steps),
    };
    let mut seen = VisibilityGrid::filled(false);
    for step in 0..steps {
        if step > 0 {
            pose = advance(env, pose, policy, &mut rng);
        }
        episode.frames.push(render_first_person(env, &pose, cfg)?);
        seen.union_with(&frustum_visibility(env, &pose, cfg));
        episode
            .targets
            .push(render_topdown_with_agent(env, &seen, pose.position)?);
        episode.visibility.push(seen.clone());
        episode.poses.push(pose);
    }
    Ok(episode)
}

fn advance(env: &EnvironmentSpec, pose: Pose, policy: RotationPolicy, rng: &mut ChaCha8Rng) -> Pose {
    match policy {
        RotationPolicy::FixedIncrement { increment } => Pose::new(pose.position, pose.yaw + increment),
        RotationPolicy::RandomTurn { max_increment } => {
            let turn = if max_increment > 0.0 {
                rng.gen_range(-max_increment..=max_increment)
            } else {
                0.0
            };
            Pose::new(pose.position, pose.yaw + turn)
        }
        RotationPolicy::RandomWalk { max_turn, step } => {
            let turn = if max_turn > 0.0 { rng.gen_range(-max_turn..=max_turn) } else { 0.0 };
            let turned = Pose::new(pose.position, pose.yaw + turn);
            let f = turned.forward();
            let next = [pose.position[0] + step * f[0], pose.position[1] + step * f[1]];
            let margin = env.cell_size();
            let inside = next.iter().all(|&v| v > margin && v < env.room_size - margin);
            if inside && env.is_free(next) {
                Pose::new(next, turned.yaw)
            } else {
                turned
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_environment, GenConfig, Rgb8, UNKNOWN_COLOR};

    fn episode(seed: u64, steps: usize, policy: RotationPolicy) -> Episode {
        let env = sample_environment(seed, &GenConfig::default()).unwrap();
        simulate_episode(&env, steps, policy, seed ^ 0xabc, &RenderConfig::default()).unwrap()
    }

    #[test]
    fn zero_steps_rejected() {
        let env = sample_environment(1, &GenConfig::default()).unwrap();
        assert!(simulate_episode(&env, 0, RotationPolicy::default(), 1, &RenderConfig::default()).is_err());
    }

    #[test]
    fn fixed_policy_turns_by_increment() {
        let ep = episode(4, 20, RotationPolicy::default());
        assert_eq!(ep.len(), 20);
        for w in ep.poses.windows(2) {
            let d = angle_diff(w[1].yaw, w[0].yaw);
            assert!((d - TAU / 20.0).abs() < 1e-9);
            assert_eq!(w[0].position, w[1].position);
        }
        assert!(ep.poses.iter().all(|p| (0.0..TAU).contains(&p.yaw)));
    }

    #[test]
    fn single_step_is_one_wedge() {
        let ep = episode(9, 1, RotationPolicy::default());
        let cfg = RenderConfig::default();
        let wedge = frustum_visibility(&ep.env, &ep.poses[0], &cfg);
        assert_eq!(ep.visibility[0], wedge);
        // roughly a sixth of the room or less, never everything
        assert!(wedge.count() < IMAGE_SIZE * IMAGE_SIZE / 2);
        for r in 0..IMAGE_SIZE {
            for c in 0..IMAGE_SIZE {
                if !wedge.get(r, c) {
                    assert_eq!(Rgb8(ep.targets[0].get_pixel(c as u32, r as u32).0), UNKNOWN_COLOR);
                }
            }
        }
    }

    #[test]
    fn visibility_is_monotone_for_all_policies() {
        let policies = [
            RotationPolicy::default(),
            RotationPolicy::RandomTurn { max_increment: 0.6 },
            RotationPolicy::RandomWalk { max_turn: 0.6, step: 0.4 },
        ];
        for (k, policy) in policies.into_iter().enumerate() {
            let ep = episode(20 + k as u64, 12, policy);
            for w in ep.visibility.windows(2) {
                assert!(w[0].is_subset_of(&w[1]));
            }
        }
    }

    #[test]
    fn random_walk_stays_on_the_floor() {
        let ep = episode(31, 40, RotationPolicy::RandomWalk { max_turn: 0.8, step: 0.5 });
        assert!(ep.poses.iter().all(|p| ep.env.is_free(p.position)));
        assert!(ep.poses.iter().any(|p| p.position != ep.env.agent_position));
    }

    #[test]
    fn episodes_are_reproducible() {
        let policy = RotationPolicy::RandomTurn { max_increment: 1.0 };
        assert_eq!(episode(12, 6, policy), episode(12, 6, policy));
    }
}
