use serde::{Deserialize, Serialize};

use crate::env::{EnvironmentSpec, Rgb8, AGENT_COLOR, SKY_COLOR, UNKNOWN_COLOR};
use crate::episode::{Pose, VisibilityGrid};
use crate::geometry::{cell_center, cell_of, is_wall_cell, ray_box, ray_wall, Face};
use crate::{EnvGenError, Frame, Result, IMAGE_SIZE};

/// Brightness factor for faces perpendicular to z.
const Z_FACE_SHADE: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { fov_deg: 60.0 }
    }
}

impl RenderConfig {
    pub fn half_fov(&self) -> f64 {
        self.fov_deg.to_radians() / 2.0
    }

    /// Focal length in pixels for a 64-pixel-wide image.
    pub fn focal(&self) -> f64 {
        (IMAGE_SIZE as f64 / 2.0) / self.half_fov().tan()
    }

    /// Floor-plane direction of the ray through the center of `column`.
    /// Its component along the view direction is exactly 1, so the ray
    /// parameter at a hit is the perpendicular (fisheye-free) distance.
    pub fn column_ray(&self, yaw: f64, column: usize) -> [f64; 2] {
        let camera_x = 2.0 * (column as f64 + 0.5) / IMAGE_SIZE as f64 - 1.0;
        let k = camera_x * self.half_fov().tan();
        let (s, c) = yaw.sin_cos();
        [c - k * s, s + k * c]
    }
}

#[derive(Debug, Clone, Copy)]
struct Band {
    distance: f64,
    height: f64,
    color: Rgb8,
}

fn check_pose(env: &EnvironmentSpec, pose: &Pose) -> Result<()> {
    if !pose.position.iter().all(|v| v.is_finite()) || !pose.yaw.is_finite() {
        return Err(EnvGenError::InvalidPose(format!("non-finite pose {pose:?}")));
    }
    if !env.is_free(pose.position) {
        return Err(EnvGenError::InvalidPose(format!(
            "position {:?} is outside the room or inside an object",
            pose.position
        )));
    }
    Ok(())
}

/// Column-raycast first-person view.
///
/// Each column paints sky above the horizon and floor below it, then the
/// wall band, then any boxes along the ray from far to near. A vertical
/// extent `[0, h]` at perpendicular distance `d` covers rows
/// `H/2 - f (y - eye) / d` for `y` in that range.
pub fn render_first_person(env: &EnvironmentSpec, pose: &Pose, cfg: &RenderConfig) -> Result<Frame> {
    check_pose(env, pose)?;
    let n = IMAGE_SIZE;
    let focal = cfg.focal();
    let horizon = n as f64 / 2.0;
    let mut img = Frame::new(n as u32, n as u32);

    let mut bands: Vec<Band> = Vec::with_capacity(env.objects.len() + 1);
    for col in 0..n {
        let dir = cfg.column_ray(pose.yaw, col);
        bands.clear();
        let (t_wall, face) = ray_wall(pose.position, dir, env.room_size);
        bands.push(Band {
            distance: t_wall,
            height: env.wall_height,
            color: shade(env.wall_color, face),
        });
        for obj in &env.objects {
            if let Some((t, face)) = ray_box(pose.position, dir, obj) {
                bands.push(Band {
                    distance: t,
                    height: obj.height,
                    color: shade(obj.color, face),
                });
            }
        }
        bands.sort_by(|a, b| b.distance.total_cmp(&a.distance));

        for row in 0..n {
            let background = if (row as f64 + 0.5) < horizon { SKY_COLOR } else { env.floor_color };
            img.put_pixel(col as u32, row as u32, background.into());
        }
        for band in &bands {
            let top = horizon - focal * (band.height - env.agent_height) / band.distance;
            let bottom = horizon + focal * env.agent_height / band.distance;
            for row in 0..n {
                let center = row as f64 + 0.5;
                if center >= top && center < bottom {
                    img.put_pixel(col as u32, row as u32, band.color.into());
                }
            }
        }
    }
    Ok(img)
}

fn shade(color: Rgb8, face: Face) -> Rgb8 {
    match face {
        Face::X => color,
        Face::Z => color.shade(Z_FACE_SHADE),
    }
}

/// Unmasked orthographic map with the agent marker at `agent`.
pub fn render_topdown_full(env: &EnvironmentSpec, agent: [f64; 2]) -> Frame {
    let n = IMAGE_SIZE;
    let mut img = Frame::new(n as u32, n as u32);
    for row in 0..n {
        for col in 0..n {
            let color = if is_wall_cell(row, col) {
                env.wall_color
            } else {
                let p = cell_center(env, row, col);
                env.objects
                    .iter()
                    .find(|o| o.contains(p))
                    .map_or(env.floor_color, |o| o.color)
            };
            img.put_pixel(col as u32, row as u32, color.into());
        }
    }
    for (row, col) in agent_marker_cells(env, agent) {
        img.put_pixel(col as u32, row as u32, AGENT_COLOR.into());
    }
    img
}

/// The 3x3 block of cells centered on the agent's cell.
pub fn agent_marker_cells(env: &EnvironmentSpec, agent: [f64; 2]) -> Vec<(usize, usize)> {
    let (r, c) = cell_of(env, agent);
    let span = |v: usize| v.saturating_sub(1)..=(v + 1).min(IMAGE_SIZE - 1);
    span(r)
        .flat_map(|rr| span(c).map(move |cc| (rr, cc)))
        .filter(|&(rr, cc)| !is_wall_cell(rr, cc))
        .collect()
}

/// Top-down map masked by `visibility`; hidden cells become [`UNKNOWN_COLOR`].
pub fn render_topdown(env: &EnvironmentSpec, visibility: &VisibilityGrid) -> Result<Frame> {
    render_topdown_with_agent(env, visibility, env.agent_position)
}

/// Same as [`render_topdown`] with the marker placed at `agent`.
pub fn render_topdown_with_agent(
    env: &EnvironmentSpec,
    visibility: &VisibilityGrid,
    agent: [f64; 2],
) -> Result<Frame> {
    if visibility.size() != IMAGE_SIZE {
        return Err(EnvGenError::Shape {
            expected: format!("{IMAGE_SIZE}x{IMAGE_SIZE} visibility grid"),
            got: format!("{0}x{0}", visibility.size()),
        });
    }
    let mut img = render_topdown_full(env, agent);
    for (col, row, px) in img.enumerate_pixels_mut() {
        if !visibility.get(row as usize, col as usize) {
            *px = UNKNOWN_COLOR.into();
        }
    }
    Ok(img)
}
