//! Oriented 3D boxes and their overlap measures.

use std::f64::consts::PI;

/// A yaw-rotated box in the ego frame. `l` runs along the heading, `w`
/// across it; `z` is the vertical centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub yaw: f64,
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut t = a % (2.0 * PI);
    if t <= -PI {
        t += 2.0 * PI;
    } else if t > PI {
        t -= 2.0 * PI;
    }
    t
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64) -> Self {
        Box3D {
            x: center[0],
            y: center[1],
            z: center[2],
            w: size[0],
            l: size[1],
            h: size[2],
            yaw: wrap_angle(yaw),
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.z, self.w, self.l, self.h, self.yaw]
            .iter()
            .all(|v| v.is_finite())
            && self.w > 0.0
            && self.l > 0.0
            && self.h > 0.0
    }

    /// Footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[a, b]| [self.x + a * c - b * s, self.y + a * s + b * c])
    }

    /// All eight corners, bottom face first.
    pub fn corners(&self) -> [[f64; 3]; 8] {
        let bev = self.bev_corners();
        let (lo, hi) = (self.z - self.h / 2.0, self.z + self.h / 2.0);
        let mut out = [[0.0; 3]; 8];
        for (i, c) in bev.iter().enumerate() {
            out[i] = [c[0], c[1], lo];
            out[i + 4] = [c[0], c[1], hi];
        }
        out
    }

    pub fn bev_area(&self) -> f64 {
        self.w * self.l
    }

    pub fn volume(&self) -> f64 {
        self.w * self.l * self.h
    }
}

/// A labelled box as produced by the scene generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthBox {
    pub class: usize,
    pub bbox: Box3D,
    /// Radial velocity in m/s; annotated but not regressed.
    pub radial_velocity: f64,
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        twice += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * twice.abs()
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Sutherland–Hodgman clipping of `subject` by the convex CCW polygon `clip`.
fn clip_polygon(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (e0, e1) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(e0, e1, cur) >= 0.0;
            let prev_in = cross(e0, e1, prev) >= 0.0;
            if cur_in != prev_in {
                let (dp, dc) = (cross(e0, e1, prev), cross(e0, e1, cur));
                let t = dp / (dp - dc);
                output.push([prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])]);
            }
            if cur_in {
                output.push(cur);
            }
        }
    }
    output
}

/// Footprint intersection area.
pub fn bev_intersection(a: &Box3D, b: &Box3D) -> f64 {
    polygon_area(&clip_polygon(&a.bev_corners(), &b.bev_corners()))
}

pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    if !a.is_valid() || !b.is_valid() {
        return 0.0;
    }
    let inter = bev_intersection(a, b);
    let union = a.bev_area() + b.bev_area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    if !a.is_valid() || !b.is_valid() {
        return 0.0;
    }
    let lo = (a.z - a.h / 2.0).max(b.z - b.h / 2.0);
    let hi = (a.z + a.h / 2.0).min(b.z + b.h / 2.0);
    let inter = bev_intersection(a, b) * (hi - lo).max(0.0);
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}
