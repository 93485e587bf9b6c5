//! Rays, cube contraction, and the two-stage ray sampler.

mod camera;
mod sampling;

pub use camera::{look_at, ray_from_pixel, ray_through, Intrinsics, Pose};
pub use sampling::{resample_pdf, sample_piecewise, uniform_samples, SamplerConfig};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
    pub appearance_index: usize,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, t_near: f64, t_far: f64, appearance_index: usize) -> Result<Self> {
        if (norm(direction) - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "ray direction {direction:?} is not unit length"
            )));
        }
        if !(t_near > 0.0 && t_far > t_near) {
            return Err(Error::InvalidArgument(format!(
                "ray bounds must satisfy 0 < t_near < t_far, got {t_near}..{t_far}"
            )));
        }
        Ok(Self {
            origin,
            direction,
            t_near,
            t_far,
            appearance_index,
        })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        [
            self.origin[0] + t * self.direction[0],
            self.origin[1] + t * self.direction[1],
            self.origin[2] + t * self.direction[2],
        ]
    }
}

/// Ordered interval edges along a ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples {
    edges: Vec<f64>,
}

impl RaySamples {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::InvalidArgument("need at least two edges".into()));
        }
        if let Some(w) = edges.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(format!(
                "edges not strictly increasing: {} then {}",
                w[0], w[1]
            )));
        }
        Ok(Self { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn midpoints(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Per-interval weights over a ray span.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightHistogram {
    pub edges: Vec<f64>,
    pub weights: Vec<f64>,
}

impl WeightHistogram {
    pub fn new(edges: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if edges.len() != weights.len() + 1 || weights.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "histogram needs one more edge than weights ({} edges, {} weights)",
                edges.len(),
                weights.len()
            )));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("histogram edges not increasing".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument("histogram weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total > 1.0 + 1e-5 {
            return Err(Error::InvalidArgument(format!("histogram mass {total} exceeds 1")));
        }
        Ok(Self { edges, weights })
    }

    pub fn span(&self) -> (f64, f64) {
        (self.edges[0], *self.edges.last().unwrap())
    }
}

/// Maps all of space into the cube `[-2, 2]^3` using the infinity norm.
/// Points inside the unit cube are left unchanged.
pub fn contract(x: Vec3) -> Result<Vec3> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("contract({x:?})")));
    }
    Ok(contract_unchecked(x))
}

#[inline]
pub fn contract_unchecked(x: Vec3) -> Vec3 {
    let n = x[0].abs().max(x[1].abs()).max(x[2].abs());
    if n <= 1.0 {
        return x;
    }
    let s = (2.0 - 1.0 / n) / n;
    [x[0] * s, x[1] * s, x[2] * s]
}
