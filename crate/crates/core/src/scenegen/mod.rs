//! Analytic oracle scenes, their reference renderer, and posed-image datasets.

mod dataset;

pub use dataset::{
    generate_dataset, load_dataset, save_dataset, CameraRig, Frame, GenOptions, SceneDataset, Split,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, normalize, uniform_samples, Ray, Vec3};
use crate::renderer::Rgb;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extents: Vec3 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Primitive {
    pub shape: Shape,
    pub center: Vec3,
    pub density: f64,
    pub diffuse: Rgb,
    #[serde(default)]
    pub specular_strength: f64,
    #[serde(default = "one")]
    pub shininess: f64,
    /// Unit vector pointing towards the light.
    #[serde(default = "up")]
    pub light_dir: Vec3,
}

fn one() -> f64 {
    1.0
}

fn up() -> Vec3 {
    [0.0, 1.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleScene {
    pub primitives: Vec<Primitive>,
    #[serde(default = "white")]
    pub background: Rgb,
}

fn white() -> Rgb {
    [1.0; 3]
}

impl Primitive {
    pub fn sphere(center: Vec3, radius: f64, density: f64, diffuse: Rgb) -> Self {
        Self {
            shape: Shape::Sphere { radius },
            center,
            density,
            diffuse,
            specular_strength: 0.0,
            shininess: 1.0,
            light_dir: up(),
        }
    }

    pub fn cuboid(center: Vec3, half_extents: Vec3, density: f64, diffuse: Rgb) -> Self {
        Self {
            shape: Shape::Box { half_extents },
            ..Self::sphere(center, 1.0, density, diffuse)
        }
    }

    pub fn contains(&self, x: Vec3) -> bool {
        let p = sub(x, self.center);
        match &self.shape {
            Shape::Sphere { radius } => dot(p, p) <= radius * radius,
            Shape::Box { half_extents } => (0..3).all(|a| p[a].abs() <= half_extents[a]),
        }
    }

    /// Outward normal of the surface nearest in shape-normalized coordinates.
    pub fn normal(&self, x: Vec3) -> Vec3 {
        let p = sub(x, self.center);
        match &self.shape {
            Shape::Sphere { .. } => {
                if dot(p, p) < 1e-24 {
                    [0.0, 0.0, 1.0]
                } else {
                    normalize(p)
                }
            }
            Shape::Box { half_extents } => {
                let rel = [0, 1, 2].map(|a| p[a] / half_extents[a]);
                let a = (0..3).max_by(|&i, &j| rel[i].abs().total_cmp(&rel[j].abs())).unwrap();
                let mut n = [0.0; 3];
                n[a] = if rel[a] < 0.0 { -1.0 } else { 1.0 };
                n
            }
        }
    }

    /// Diffuse color plus a Phong lobe around the mirrored light direction.
    pub fn color(&self, x: Vec3, d: Vec3) -> Rgb {
        let n = self.normal(x);
        let l = self.light_dir;
        let nl = dot(n, l);
        let r = [2.0 * nl * n[0] - l[0], 2.0 * nl * n[1] - l[1], 2.0 * nl * n[2] - l[2]];
        let cos = -dot(r, d);
        let spec = if self.specular_strength > 0.0 && cos > 0.0 {
            self.specular_strength * cos.powf(self.shininess)
        } else {
            0.0
        };
        self.diffuse.map(|c| (c + spec).clamp(0.0, 1.0))
    }

    /// Parameter interval `[t0, t1]` where the ray line is inside the primitive.
    pub fn intersect(&self, o: Vec3, d: Vec3) -> Option<(f64, f64)> {
        let p = sub(o, self.center);
        match &self.shape {
            Shape::Sphere { radius } => {
                let b = dot(p, d);
                let c = dot(p, p) - radius * radius;
                let disc = b * b - c;
                if disc <= 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                Some((-b - s, -b + s))
            }
            Shape::Box { half_extents } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for a in 0..3 {
                    if d[a].abs() < 1e-15 {
                        if p[a].abs() > half_extents[a] {
                            return None;
                        }
                        continue;
                    }
                    let ta = (-half_extents[a] - p[a]) / d[a];
                    let tb = (half_extents[a] - p[a]) / d[a];
                    t0 = t0.max(ta.min(tb));
                    t1 = t1.min(ta.max(tb));
                }
                (t1 > t0).then_some((t0, t1))
            }
        }
    }
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

impl OracleScene {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |c: &Rgb| c.iter().all(|v| (0.0..=1.0).contains(v));
        if !in_unit(&self.background) {
            return Err(Error::InvalidArgument("background color outside [0, 1]".into()));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            let bad = |m: &str| Err(Error::InvalidArgument(format!("primitive {i}: {m}")));
            if !(p.density >= 0.0 && p.density.is_finite()) {
                return bad("density must be finite and non-negative");
            }
            if !in_unit(&p.diffuse) {
                return bad("diffuse color outside [0, 1]");
            }
            if !(0.0..=1.0).contains(&p.specular_strength) || !(p.shininess >= 1.0) {
                return bad("specular_strength must lie in [0, 1] and shininess be >= 1");
            }
            if (crate::geometry::norm(p.light_dir) - 1.0).abs() > 1e-6 {
                return bad("light_dir must be a unit vector");
            }
            let ok = match &p.shape {
                Shape::Sphere { radius } => *radius > 0.0,
                Shape::Box { half_extents } => half_extents.iter().all(|h| *h > 0.0),
            };
            if !ok {
                return bad("shape extents must be positive");
            }
        }
        Ok(())
    }

    /// Built-in scenes: `default` (diffuse), `specular` (same layout, shiny),
    /// `calibration` (a different layout, for decoder pre-training).
    pub fn named(name: &str) -> Result<Self> {
        let light = normalize([0.4, 1.0, 0.6]);
        let layout = || {
            vec![
                Primitive::sphere([0.0, 0.0, 0.0], 0.55, 40.0, [0.85, 0.25, 0.2]),
                Primitive::cuboid([0.55, -0.25, 0.45], [0.25, 0.25, 0.25], 40.0, [0.2, 0.35, 0.85]),
                Primitive::sphere([-0.55, -0.3, 0.35], 0.25, 40.0, [0.25, 0.75, 0.3]),
                Primitive::cuboid([0.0, -0.6, 0.0], [0.9, 0.05, 0.9], 40.0, [0.8, 0.75, 0.6]),
            ]
        };
        let scene = match name {
            "default" => OracleScene {
                primitives: layout(),
                background: white(),
            },
            "specular" => OracleScene {
                primitives: layout()
                    .into_iter()
                    .map(|p| Primitive {
                        specular_strength: 0.8,
                        shininess: 16.0,
                        light_dir: light,
                        ..p
                    })
                    .collect(),
                background: white(),
            },
            "calibration" => OracleScene {
                primitives: vec![
                    Primitive::cuboid([0.2, 0.1, -0.2], [0.4, 0.3, 0.2], 30.0, [0.6, 0.6, 0.2]),
                    Primitive::sphere([-0.4, 0.2, 0.3], 0.35, 30.0, [0.3, 0.2, 0.7]),
                    Primitive {
                        specular_strength: 0.5,
                        shininess: 8.0,
                        light_dir: light,
                        ..Primitive::sphere([0.3, -0.4, 0.4], 0.3, 30.0, [0.1, 0.6, 0.6])
                    },
                ],
                background: white(),
            },
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown scene `{other}` (built-in: default, specular, calibration)"
                )))
            }
        };
        Ok(scene)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: OracleScene = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }
}

/// Density and color at `x` seen along direction `d`. Overlapping
/// primitives mix their colors in proportion to density.
pub fn oracle_field(scene: &OracleScene, x: Vec3, d: Vec3) -> (f64, Rgb) {
    let mut sigma = 0.0;
    let mut c = [0.0; 3];
    for p in scene.primitives.iter().filter(|p| p.contains(x)) {
        sigma += p.density;
        let pc = p.color(x, d);
        for a in 0..3 {
            c[a] += p.density * pc[a];
        }
    }
    if sigma > 0.0 {
        c = c.map(|v| v / sigma);
    }
    (sigma, c)
}

/// Exact optical depth of each interval between consecutive `edges`, and the
/// color of the occupied part of the interval (density-weighted over
/// primitives, each evaluated at the middle of its overlap).
pub fn oracle_segments(scene: &OracleScene, ray: &Ray, edges: &[f64]) -> Vec<(f64, Rgb)> {
    let hits: Vec<(usize, f64, f64)> = scene
        .primitives
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.intersect(ray.origin, ray.direction).map(|(a, b)| (i, a, b)))
        .filter(|&(i, _, _)| scene.primitives[i].density > 0.0)
        .collect();
    edges
        .windows(2)
        .map(|w| {
            let (lo, hi) = (w[0], w[1]);
            let mut tau = 0.0;
            let mut c = [0.0; 3];
            for &(i, a, b) in &hits {
                let (s, e) = (a.max(lo), b.min(hi));
                if e <= s {
                    continue;
                }
                let p = &scene.primitives[i];
                let part = p.density * (e - s);
                tau += part;
                let pc = p.color(ray.at(0.5 * (s + e)), ray.direction);
                for k in 0..3 {
                    c[k] += part * pc[k];
                }
            }
            if tau > 0.0 {
                c = c.map(|v| v / tau);
            }
            (tau, c)
        })
        .collect()
}

/// Reference rendering with `n` uniform intervals on `[t_near, t_far]`.
/// Each interval's optical depth is integrated exactly, so the only
/// discretisation error comes from color variation inside an interval.
pub fn oracle_render(scene: &OracleScene, ray: &Ray, n: usize) -> Result<Rgb> {
    let samples = uniform_samples(ray.t_near, ray.t_far, n)?;
    let mut trans = 1.0;
    let mut out = [0.0; 3];
    for (tau, c) in oracle_segments(scene, ray, samples.edges()) {
        if tau == 0.0 {
            continue;
        }
        let next = trans * (-tau).exp();
        let alpha_t = trans - next;
        for a in 0..3 {
            out[a] += alpha_t * c[a];
        }
        trans = next;
    }
    for a in 0..3 {
        out[a] += trans * scene.background[a];
    }
    Ok(out)
}
