use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{look_at, ray_from_pixel, Intrinsics, Pose, Ray};
use crate::renderer::{ImageBuf, Rgb};
use crate::scenegen::{oracle_render, OracleScene};

const MANIFEST: &str = "manifest.txt";
const HEADER: &str = "enerf-dataset 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Eval => "eval",
        })
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            _ => Err(format!("unknown split `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraRig {
    Orbit,
    Forward,
    Spiral,
}

impl FromStr for CameraRig {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "orbit" => Ok(CameraRig::Orbit),
            "forward" => Ok(CameraRig::Forward),
            "spiral" => Ok(CameraRig::Spiral),
            _ => Err(format!("unknown rig `{s}` (valid: orbit, forward, spiral)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub name: String,
    pub pose: Pose,
    /// RGB8, row-major.
    pub image: Vec<u8>,
    pub appearance_index: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    pub width: u32,
    pub height: u32,
    pub intrinsics: Intrinsics,
    pub near: f64,
    pub far: f64,
    pub background: Rgb,
    pub frames: Vec<Frame>,
}

impl SceneDataset {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.frames.len()).filter(|&i| self.frames[i].split == split).collect()
    }

    /// Size of the appearance table a model needs for this dataset.
    pub fn num_appearance(&self) -> usize {
        self.frames.iter().map(|f| f.appearance_index + 1).max().unwrap_or(0)
    }

    pub fn train_appearances(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .indices(Split::Train)
            .iter()
            .map(|&i| self.frames[i].appearance_index)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn ray(&self, frame: usize, u: u32, v: u32) -> Result<Ray> {
        let f = &self.frames[frame];
        ray_from_pixel(&self.intrinsics, &f.pose, (u, v), (self.near, self.far), f.appearance_index)
    }

    pub fn pixel(&self, frame: usize, u: u32, v: u32) -> Rgb {
        let i = ((v * self.width + u) * 3) as usize;
        let img = &self.frames[frame].image;
        [0, 1, 2].map(|a| img[i + a] as f64 / 255.0)
    }

    pub fn image(&self, frame: usize) -> ImageBuf {
        ImageBuf::from_rgb8(self.width, self.height, &self.frames[frame].image).expect("frame size checked on load")
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::EmptyScene("dataset has no frames".into()));
        }
        let want = (self.width * self.height * 3) as usize;
        for f in &self.frames {
            f.pose.validate()?;
            if f.image.len() != want {
                return Err(Error::ResolutionMismatch {
                    frame: f.name.clone(),
                    expected: (self.width, self.height),
                    found: (0, 0),
                });
            }
        }
        if !(self.near > 0.0 && self.far > self.near) {
            return Err(Error::InvalidArgument("dataset bounds must satisfy 0 < near < far".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenOptions {
    pub fov_deg: f64,
    pub near: f64,
    pub far: f64,
    pub n_quadrature: usize,
    pub radius: f64,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            fov_deg: 45.0,
            near: 0.5,
            far: 6.0,
            n_quadrature: 4096,
            radius: 3.0,
        }
    }
}

/// Frame slots `0..n` that hold eval views, spread evenly between train views.
fn eval_slots(n_train: usize, n_eval: usize) -> Vec<usize> {
    let n = n_train + n_eval;
    (0..n_eval)
        .map(|j| ((2 * j + 1) * n) / (2 * n_eval))
        .collect()
}

fn rig_poses(rig: CameraRig, n: usize, radius: f64, rng: &mut ChaCha8Rng) -> Vec<Pose> {
    let up = [0.0, 1.0, 0.0];
    let target = [0.0, 0.0, 0.0];
    (0..n)
        .map(|k| {
            let s = (k as f64 + rng.random_range(-0.25..0.25)) / n as f64;
            match rig {
                CameraRig::Orbit => {
                    let phi = std::f64::consts::TAU * s;
                    let elev = (15.0 + 20.0 * (3.0 * phi).sin().abs()).to_radians();
                    let eye = [
                        radius * elev.cos() * phi.cos(),
                        radius * elev.sin(),
                        radius * elev.cos() * phi.sin(),
                    ];
                    look_at(eye, target, up)
                }
                CameraRig::Forward => {
                    // straight dolly along -z, all cameras facing the same way
                    let eye = [0.0, 0.3, radius + 1.0 - 1.5 * s];
                    look_at(eye, [0.0, 0.3, eye[2] - 1.0], up)
                }
                CameraRig::Spiral => {
                    let phi = 2.0 * std::f64::consts::TAU * s;
                    let r = radius * (0.8 + 0.2 * s);
                    let eye = [r * phi.cos(), 0.3 + 1.2 * s, r * phi.sin()];
                    look_at(eye, target, up)
                }
            }
        })
        .collect()
}

pub fn render_view(scene: &OracleScene, ds_like: &SceneDataset, pose: &Pose, n_quadrature: usize) -> Result<Vec<u8>> {
    let (w, h) = (ds_like.width, ds_like.height);
    let px: Vec<Result<[u8; 3]>> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let ray = ray_from_pixel(&ds_like.intrinsics, pose, (i % w, i / w), (ds_like.near, ds_like.far), 0)?;
            let c = oracle_render(scene, &ray, n_quadrature)?;
            Ok(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        })
        .collect();
    let mut out = Vec::with_capacity((w * h * 3) as usize);
    for p in px {
        out.extend_from_slice(&p?);
    }
    Ok(out)
}

/// Renders `n_train + n_eval` views of `scene` from `rig`. Eval views are
/// interleaved with train views along the rig path.
pub fn generate_dataset(
    scene: &OracleScene,
    n_train: usize,
    n_eval: usize,
    resolution: (u32, u32),
    rig: CameraRig,
    seed: u64,
    opts: &GenOptions,
) -> Result<SceneDataset> {
    if n_train == 0 || n_eval == 0 {
        return Err(Error::InvalidArgument("need at least one train and one eval view".into()));
    }
    if resolution.0 == 0 || resolution.1 == 0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    scene.validate()?;
    let n = n_train + n_eval;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poses = rig_poses(rig, n, opts.radius, &mut rng);
    let evals = eval_slots(n_train, n_eval);
    let mut ds = SceneDataset {
        width: resolution.0,
        height: resolution.1,
        intrinsics: Intrinsics::from_fov(resolution.0, resolution.1, opts.fov_deg),
        near: opts.near,
        far: opts.far,
        background: scene.background,
        frames: Vec::with_capacity(n),
    };
    for (k, pose) in poses.into_iter().enumerate() {
        let image = render_view(scene, &ds, &pose, opts.n_quadrature)?;
        ds.frames.push(Frame {
            name: format!("frame_{k:03}.png"),
            pose,
            image,
            appearance_index: k,
            split: if evals.contains(&k) { Split::Eval } else { Split::Train },
        });
    }
    Ok(ds)
}

pub fn save_dataset(ds: &SceneDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let i = &ds.intrinsics;
    let b = ds.background;
    let mut m = format!(
        "{HEADER}\nsize {} {}\nintrinsics {:?} {:?} {:?} {:?}\nbounds {:?} {:?}\nbackground {:?} {:?} {:?}\n",
        ds.width, ds.height, i.fx, i.fy, i.cx, i.cy, ds.near, ds.far, b[0], b[1], b[2]
    );
    m.push_str("# frame <file> <split> <appearance> <16 pose values, row-major camera-to-world>\n");
    for f in &ds.frames {
        let pose: Vec<String> = f.pose.row_major().iter().map(|v| format!("{v:?}")).collect();
        m.push_str(&format!("frame {} {} {} {}\n", f.name, f.split, f.appearance_index, pose.join(" ")));
        let path = dir.join(&f.name);
        image::save_buffer(&path, &f.image, ds.width, ds.height, image::ColorType::Rgb8)
            .map_err(|source| Error::Image { path, source })?;
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, m).map_err(|e| Error::io(path, e))
}

fn parse_floats(line: usize, parts: &[&str], want: usize) -> Result<Vec<f64>> {
    if parts.len() != want {
        return Err(Error::Manifest {
            line,
            msg: format!("expected {want} numbers, found {}", parts.len()),
        });
    }
    parts
        .iter()
        .map(|p| {
            p.parse::<f64>().map_err(|_| Error::Manifest {
                line,
                msg: format!("`{p}` is not a number"),
            })
        })
        .collect()
}

pub fn load_dataset(dir: &Path) -> Result<SceneDataset> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut size = None;
    let mut intr = None;
    let mut bounds = None;
    let mut background = [1.0; 3];
    let mut entries = Vec::new();
    let mut saw_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        if !saw_header {
            if l != HEADER {
                return Err(Error::Manifest {
                    line,
                    msg: format!("expected header `{HEADER}`"),
                });
            }
            saw_header = true;
            continue;
        }
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts[0] {
            "size" => {
                let v = parse_floats(line, &parts[1..], 2)?;
                if v.iter().any(|x| *x < 1.0 || x.fract() != 0.0) {
                    return Err(Error::Manifest {
                        line,
                        msg: "size must be two positive integers".into(),
                    });
                }
                size = Some((v[0] as u32, v[1] as u32));
            }
            "intrinsics" => {
                let v = parse_floats(line, &parts[1..], 4)?;
                intr = Some(Intrinsics {
                    fx: v[0],
                    fy: v[1],
                    cx: v[2],
                    cy: v[3],
                });
            }
            "bounds" => {
                let v = parse_floats(line, &parts[1..], 2)?;
                bounds = Some((v[0], v[1]));
            }
            "background" => {
                let v = parse_floats(line, &parts[1..], 3)?;
                background = [v[0], v[1], v[2]];
            }
            "frame" => {
                if parts.len() < 4 {
                    return Err(Error::Manifest {
                        line,
                        msg: "frame needs a file, split, appearance index and 16 pose values".into(),
                    });
                }
                let split: Split = parts[2].parse().map_err(|msg| Error::Manifest { line, msg })?;
                let app: usize = parts[3].parse().map_err(|_| Error::Manifest {
                    line,
                    msg: format!("bad appearance index `{}`", parts[3]),
                })?;
                let pose = Pose::from_row_major(&parse_floats(line, &parts[4..], 16)?)?;
                pose.validate().map_err(|e| Error::Manifest {
                    line,
                    msg: e.to_string(),
                })?;
                entries.push((line, parts[1].to_string(), split, app, pose));
            }
            other => {
                return Err(Error::Manifest {
                    line,
                    msg: format!("unknown key `{other}`"),
                })
            }
        }
    }
    let missing = |what: &str| Error::Manifest {
        line: text.lines().count(),
        msg: format!("manifest has no `{what}` line"),
    };
    let (width, height) = size.ok_or_else(|| missing("size"))?;
    let intrinsics = intr.ok_or_else(|| missing("intrinsics"))?;
    let (near, far) = bounds.ok_or_else(|| missing("bounds"))?;
    let mut frames = Vec::with_capacity(entries.len());
    for (_, name, split, appearance_index, pose) in entries {
        let ipath = dir.join(&name);
        if !ipath.is_file() {
            return Err(Error::MissingFrame { frame: name, path: ipath });
        }
        let img = image::open(&ipath)
            .map_err(|source| Error::Image {
                path: ipath.clone(),
                source,
            })?
            .to_rgb8();
        if img.dimensions() != (width, height) {
            return Err(Error::ResolutionMismatch {
                frame: name,
                expected: (width, height),
                found: img.dimensions(),
            });
        }
        frames.push(Frame {
            name,
            pose,
            image: img.into_raw(),
            appearance_index,
            split,
        });
    }
    let ds = SceneDataset {
        width,
        height,
        intrinsics,
        near,
        far,
        background,
        frames,
    };
    ds.validate()?;
    Ok(ds)
}
