use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cross, dot, normalize, Ray, Vec3};

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Square pixels, principal point at the image center.
    pub fn from_fov(width: u32, height: u32, fov_x_deg: f64) -> Self {
        let fx = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Self {
            fx,
            fy: fx,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
        }
    }
}

/// Camera-to-world transform, row-major. Cameras look down their local -z
/// axis with +y up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose(pub [[f64; 4]; 4]);

impl Pose {
    pub fn identity() -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Pose(m)
    }

    pub fn translation(&self) -> Vec3 {
        [self.0[0][3], self.0[1][3], self.0[2][3]]
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            out[r * 4..r * 4 + 4].copy_from_slice(&self.0[r]);
        }
        out
    }

    pub fn from_row_major(v: &[f64]) -> Result<Self> {
        if v.len() != 16 {
            return Err(Error::InvalidArgument(format!("pose needs 16 values, got {}", v.len())));
        }
        let mut m = [[0.0; 4]; 4];
        for r in 0..4 {
            m[r].copy_from_slice(&v[r * 4..r * 4 + 4]);
        }
        Ok(Pose(m))
    }

    /// Bottom row `(0, 0, 0, 1)` and an orthonormal rotation block within `1e-4`.
    pub fn validate(&self) -> Result<()> {
        let m = &self.0;
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidArgument(format!("pose bottom row is {:?}", m[3])));
        }
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-4 {
                    return Err(Error::InvalidArgument(format!(
                        "pose rotation is not orthonormal (R^T R [{i}][{j}] = {d})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Camera at `eye` looking at `target`.
pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Pose {
    let back = normalize([eye[0] - target[0], eye[1] - target[1], eye[2] - target[2]]);
    let mut right = cross(up, back);
    if dot(right, right) < 1e-12 {
        right = cross([1.0, 0.0, 0.0], back);
    }
    let right = normalize(right);
    let up = cross(back, right);
    Pose([
        [right[0], up[0], back[0], eye[0]],
        [right[1], up[1], back[1], eye[1]],
        [right[2], up[2], back[2], eye[2]],
        [0.0, 0.0, 0.0, 1.0],
    ])
}

/// Ray through the continuous image-plane point `(x, y)` (pixel `i` has its center at `i + 0.5`).
pub fn ray_through(
    intr: &Intrinsics,
    pose: &Pose,
    x: f64,
    y: f64,
    bounds: (f64, f64),
    appearance_index: usize,
) -> Result<Ray> {
    if !(intr.fx > 0.0 && intr.fy > 0.0) {
        return Err(Error::InvalidArgument("focal lengths must be positive".into()));
    }
    pose.validate()?;
    let cam = [(x - intr.cx) / intr.fx, -(y - intr.cy) / intr.fy, -1.0];
    let d = normalize(pose.rotate(cam));
    Ray::new(pose.translation(), d, bounds.0, bounds.1, appearance_index)
}

/// Ray through the center of pixel `(u, v)` (column, row).
pub fn ray_from_pixel(
    intr: &Intrinsics,
    pose: &Pose,
    pixel: (u32, u32),
    bounds: (f64, f64),
    appearance_index: usize,
) -> Result<Ray> {
    ray_through(
        intr,
        pose,
        pixel.0 as f64 + 0.5,
        pixel.1 as f64 + 0.5,
        bounds,
        appearance_index,
    )
}
