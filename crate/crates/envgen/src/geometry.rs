//! Floor-plane geometry shared by the renderers and the visibility sweep.

use std::f64::consts::{PI, TAU};

use crate::env::{EnvironmentSpec, ObjectBox};
use crate::IMAGE_SIZE;

/// Wraps an angle into `[0, 2π)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Signed difference `a - b` wrapped into `(-π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// World-space center of top-down cell `(row, col)`.
pub fn cell_center(env: &EnvironmentSpec, row: usize, col: usize) -> [f64; 2] {
    let cell = env.cell_size();
    [(col as f64 + 0.5) * cell, (row as f64 + 0.5) * cell]
}

/// Top-down cell containing a world point, clamped to the grid.
pub fn cell_of(env: &EnvironmentSpec, p: [f64; 2]) -> (usize, usize) {
    let cell = env.cell_size();
    let idx = |v: f64| ((v / cell).floor().max(0.0) as usize).min(IMAGE_SIZE - 1);
    (idx(p[1]), idx(p[0]))
}

/// Cells on the outermost ring are drawn as wall.
pub fn is_wall_cell(row: usize, col: usize) -> bool {
    row == 0 || col == 0 || row == IMAGE_SIZE - 1 || col == IMAGE_SIZE - 1
}

/// Which pair of faces a ray entered through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    /// Faces perpendicular to the x axis.
    X,
    /// Faces perpendicular to the z axis.
    Z,
}

/// Slab test of the ray `origin + t * dir` against a box footprint.
/// Returns the entry parameter and face when the box is hit at `t > 0`.
pub fn ray_box(origin: [f64; 2], dir: [f64; 2], b: &ObjectBox) -> Option<(f64, Face)> {
    let (lo, hi) = (b.min(), b.max());
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    let mut face = Face::X;
    for axis in 0..2 {
        if dir[axis] == 0.0 {
            if origin[axis] < lo[axis] || origin[axis] > hi[axis] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[axis];
        let (mut t0, mut t1) = ((lo[axis] - origin[axis]) * inv, (hi[axis] - origin[axis]) * inv);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_enter {
            t_enter = t0;
            face = if axis == 0 { Face::X } else { Face::Z };
        }
        t_exit = t_exit.min(t1);
    }
    (t_enter <= t_exit && t_enter > 0.0).then_some((t_enter, face))
}

/// Parameter where the ray leaves the room through a wall.
pub fn ray_wall(origin: [f64; 2], dir: [f64; 2], room: f64) -> (f64, Face) {
    let along = |o: f64, d: f64| {
        if d > 0.0 {
            (room - o) / d
        } else if d < 0.0 {
            -o / d
        } else {
            f64::INFINITY
        }
    };
    let tx = along(origin[0], dir[0]);
    let tz = along(origin[1], dir[1]);
    if tx <= tz {
        (tx, Face::X)
    } else {
        (tz, Face::Z)
    }
}

/// True if the closed segment `a -> b` touches the box footprint.
pub fn segment_hits_box(a: [f64; 2], b: [f64; 2], bx: &ObjectBox) -> bool {
    let dir = [b[0] - a[0], b[1] - a[1]];
    let (lo, hi) = (bx.min(), bx.max());
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for axis in 0..2 {
        if dir[axis] == 0.0 {
            if a[axis] < lo[axis] || a[axis] > hi[axis] {
                return false;
            }
            continue;
        }
        let inv = 1.0 / dir[axis];
        let (mut e, mut x) = ((lo[axis] - a[axis]) * inv, (hi[axis] - a[axis]) * inv);
        if e > x {
            std::mem::swap(&mut e, &mut x);
        }
        t0 = t0.max(e);
        t1 = t1.min(x);
        if t0 > t1 {
            return false;
        }
    }
    true
}
