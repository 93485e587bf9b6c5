//! The radiance field: hash-encoded spatial MLP, direction/appearance MLP,
//! frozen decoders, the joint color blend, ablation variants and the
//! proposal density networks.

mod mlp;
mod pretrain;

pub use mlp::{init_params_by_spec, mlp_forward, ParamInit, ParamSpec};
pub use pretrain::{pretrain_decoders, PretrainReport};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, ParamStore, Real, Var};
use crate::encoders::{hash_encode, sh_basis, HashEncodingConfig, ShLevel};
use crate::error::{Error, Result};
use crate::geometry::{contract_unchecked, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Enhance,
    NoMultiperf,
    NoPretrained,
    Test1,
    Test2,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Enhance,
        Variant::NoMultiperf,
        Variant::NoPretrained,
        Variant::Test1,
        Variant::Test2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Enhance => "enhance",
            Variant::NoMultiperf => "no_multiperf",
            Variant::NoPretrained => "no_pretrained",
            Variant::Test1 => "test1",
            Variant::Test2 => "test2",
        }
    }

    /// Whether the model has separate mid and coarse color heads.
    pub fn has_split_colors(self) -> bool {
        self != Variant::NoMultiperf
    }

    pub fn has_decoders(self) -> bool {
        self != Variant::NoPretrained
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    /// Linear layers in the spatial MLP.
    pub spatial_layers: usize,
    pub spatial_hidden: usize,
    pub directional_layers: usize,
    pub directional_hidden: usize,
    pub appearance_dim: usize,
    pub geo_dim: usize,
    pub decoder_layers: usize,
    pub decoder_hidden: usize,
    pub variant: Variant,
    pub mid_uses_spatial_features: bool,
    /// SH level of the direction encoding.
    pub direction_level: u8,
    pub hash: HashEncodingConfig,
    pub proposal_hash: HashEncodingConfig,
    pub proposal_hidden: usize,
    pub proposal_rounds: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            spatial_layers: 3,
            spatial_hidden: 64,
            directional_layers: 2,
            directional_hidden: 32,
            appearance_dim: 16,
            geo_dim: 16,
            decoder_layers: 3,
            decoder_hidden: 32,
            variant: Variant::Enhance,
            mid_uses_spatial_features: false,
            direction_level: 4,
            hash: HashEncodingConfig::default(),
            proposal_hash: HashEncodingConfig {
                table_size: 1 << 16,
                features_per_entry: 2,
                grid_resolution: 64,
                ..HashEncodingConfig::default()
            },
            proposal_hidden: 16,
            proposal_rounds: 2,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        self.hash.validate()?;
        self.proposal_hash.validate()?;
        ShLevel::new(self.direction_level).map_err(|e| Error::Config(e.to_string()))?;
        let counts = [
            ("spatial_layers", self.spatial_layers),
            ("spatial_hidden", self.spatial_hidden),
            ("directional_layers", self.directional_layers),
            ("directional_hidden", self.directional_hidden),
            ("appearance_dim", self.appearance_dim),
            ("geo_dim", self.geo_dim),
            ("decoder_layers", self.decoder_layers),
            ("decoder_hidden", self.decoder_hidden),
            ("proposal_hidden", self.proposal_hidden),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("field.{name} must be positive")));
            }
        }
        if self.variant == Variant::Test2 && self.mid_uses_spatial_features {
            return Err(Error::Config(
                "mid_uses_spatial_features is not available for the test2 variant".into(),
            ));
        }
        Ok(())
    }

    fn dir_dim(&self) -> usize {
        (self.direction_level as usize).pow(2)
    }
}

/// How rays pick their appearance embedding.
#[derive(Debug, Clone, PartialEq)]
pub enum Appearance {
    /// One table row per ray.
    PerRay(Vec<usize>),
    /// The same explicit vector for every ray (e.g. the mean embedding).
    Fixed(Vec<f64>),
}

/// Sample points grouped by ray: point `i` belongs to ray `i / per_ray`.
#[derive(Debug, Clone)]
pub struct PointBatch<'a> {
    pub points: &'a [Vec3],
    pub dirs: &'a [Vec3],
    pub per_ray: usize,
    pub appearance: &'a Appearance,
}

impl PointBatch<'_> {
    pub fn rays(&self) -> usize {
        self.dirs.len()
    }

    fn ray_of_points(&self) -> Vec<usize> {
        (0..self.points.len()).map(|i| i / self.per_ray).collect()
    }
}

/// Per-sample graph nodes produced by a forward pass. Colors are `[n, 3]`,
/// scalars `[n, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct FieldVars {
    pub sigma: Var,
    pub c_fine: Var,
    pub c_mid: Option<Var>,
    pub c_coarse: Option<Var>,
    pub y: Option<Var>,
    pub x_factor: Option<Var>,
}

/// `y * c_mid + (1 - y) * c_coarse`.
pub fn joint_color<T: Real>(g: &mut Graph<'_, T>, y: Var, c_mid: Var, c_coarse: Var) -> Result<Var> {
    let diff = g.sub(c_mid, c_coarse)?;
    let scaled = g.mul(diff, y)?;
    g.add(c_coarse, scaled)
}

/// Average of `y * mid + (1 - y) * coarse` and `(1 - x) * mid + x * coarse`.
pub fn joint_color_test1<T: Real>(g: &mut Graph<'_, T>, x: Var, y: Var, c_mid: Var, c_coarse: Var) -> Result<Var> {
    let fine1 = joint_color(g, y, c_mid, c_coarse)?;
    let one_minus_x = g.affine(x, -1.0, 1.0);
    let fine2 = joint_color(g, one_minus_x, c_mid, c_coarse)?;
    let s = g.add(fine1, fine2)?;
    Ok(g.affine(s, 0.5, 0.0))
}

/// Plain-value form of [`joint_color`].
pub fn joint_color_values(y: f64, c_mid: [f64; 3], c_coarse: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|a| y * c_mid[a] + (1.0 - y) * c_coarse[a])
}

/// Plain-value form of [`joint_color_test1`].
pub fn joint_color_test1_values(x: f64, y: f64, c_mid: [f64; 3], c_coarse: [f64; 3]) -> [f64; 3] {
    let f1 = joint_color_values(y, c_mid, c_coarse);
    let f2 = joint_color_values(1.0 - x, c_mid, c_coarse);
    [0, 1, 2].map(|a| 0.5 * (f1[a] + f2[a]))
}

const SIGMA_CLAMP: f64 = 10.0;
/// Initial bias of every density output, so rays start mostly transparent.
const DENSITY_BIAS: f64 = -3.0;

/// Model structure. Weights live in a separate [`ParamStore`] so the same
/// structure runs in `f32` for training and `f64` for gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub config: FieldConfig,
    pub num_appearance: usize,
}

impl Field {
    pub fn new(config: FieldConfig, num_appearance: usize) -> Result<Self> {
        config.validate()?;
        if num_appearance == 0 {
            return Err(Error::InvalidArgument("model needs at least one appearance embedding".into()));
        }
        Ok(Self {
            config,
            num_appearance,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    fn spatial_dims(&self) -> (usize, usize) {
        let c = &self.config;
        let enc = c.hash.output_dim();
        let input = match c.variant {
            Variant::NoPretrained | Variant::Test2 => enc,
            _ => enc + c.decoder_hidden,
        };
        let output = match c.variant {
            Variant::NoMultiperf => 1 + c.geo_dim,
            Variant::Test2 => enc,
            _ => 5 + c.geo_dim,
        };
        (input, output)
    }

    fn directional_dims(&self) -> (usize, usize) {
        let c = &self.config;
        let mut input = c.dir_dim() + c.appearance_dim;
        if !matches!(c.variant, Variant::NoPretrained | Variant::Test2) {
            input += c.decoder_hidden;
        }
        if self.directional_uses_geo() {
            input += c.geo_dim;
        }
        let output = match c.variant {
            Variant::Test1 => 4,
            Variant::Test2 => c.dir_dim(),
            _ => 3,
        };
        (input, output)
    }

    fn directional_uses_geo(&self) -> bool {
        self.config.variant == Variant::NoMultiperf || self.config.mid_uses_spatial_features
    }

    fn mlp_dims(input: usize, hidden: usize, layers: usize, output: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(std::iter::repeat_n(hidden, layers - 1));
        d.push(output);
        d
    }

    fn decoder_dims(&self, input: usize) -> Vec<usize> {
        let c = &self.config;
        Self::mlp_dims(input, c.decoder_hidden, c.decoder_layers, c.decoder_hidden)
    }

    /// Every parameter with its shape, initialiser and frozen flag.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let c = &self.config;
        let mut specs = vec![
            ParamSpec::new("field.hash", &c.hash.table_shape(), ParamInit::Uniform(1e-4), false),
            ParamSpec::new(
                "field.appearance",
                &[self.num_appearance, c.appearance_dim],
                ParamInit::Uniform(0.1),
                false,
            ),
        ];
        let (si, so) = self.spatial_dims();
        specs.extend(ParamSpec::mlp("field.spatial", &Self::mlp_dims(si, c.spatial_hidden, c.spatial_layers, so), false));
        let (di, dout) = self.directional_dims();
        specs.extend(ParamSpec::mlp(
            "field.dir",
            &Self::mlp_dims(di, c.directional_hidden, c.directional_layers, dout),
            false,
        ));
        if c.variant.has_decoders() {
            specs.extend(ParamSpec::mlp("decoder.coarse", &self.decoder_dims(c.hash.output_dim()), true));
            specs.extend(ParamSpec::mlp("decoder.fine", &self.decoder_dims(c.dir_dim()), true));
        }
        if c.variant == Variant::Test2 {
            specs.extend(ParamSpec::mlp("head.spatial", &[c.decoder_hidden, 5], true));
            specs.extend(ParamSpec::mlp("head.dir", &[c.decoder_hidden, 3], true));
        }
        for k in 0..c.proposal_rounds {
            let p = format!("prop{k}");
            specs.push(ParamSpec::new(
                &format!("{p}.hash"),
                &c.proposal_hash.table_shape(),
                ParamInit::Uniform(1e-4),
                false,
            ));
            specs.extend(ParamSpec::mlp(
                &p,
                &[c.proposal_hash.output_dim(), c.proposal_hidden, 1],
                false,
            ));
        }
        specs
    }

    /// Seeded initial weights. Each tensor draws from its own stream keyed by
    /// name, so shared parts (decoders, proposals) match across variants.
    pub fn init_params<T: Real>(&self, seed: u64) -> ParamStore<T> {
        let mut store = init_params_by_spec(&self.param_specs(), seed);
        let c = &self.config;
        let mut heads = vec![if c.variant == Variant::Test2 {
            "head.spatial.l0.b".to_string()
        } else {
            format!("field.spatial.l{}.b", c.spatial_layers - 1)
        }];
        heads.extend((0..c.proposal_rounds).map(|k| format!("prop{k}.l1.b")));
        for h in heads {
            if let Ok(p) = store.get_mut(&h) {
                p.tensor.values_mut()[0] = T::of(DENSITY_BIAS);
            }
        }
        store
    }

    /// Mean embedding over the given table rows.
    pub fn mean_appearance<T: Real>(&self, params: &ParamStore<T>, rows: &[usize]) -> Result<Vec<f64>> {
        let table = params.get("field.appearance")?.tensor.values();
        let d = self.config.appearance_dim;
        let mut mean = vec![0.0; d];
        if rows.is_empty() {
            return Ok(mean);
        }
        for &r in rows {
            if r >= self.num_appearance {
                return Err(Error::UnknownAppearance {
                    index: r,
                    count: self.num_appearance,
                });
            }
            for (m, v) in mean.iter_mut().zip(&table[r * d..(r + 1) * d]) {
                *m += v.f64() / rows.len() as f64;
            }
        }
        Ok(mean)
    }

    fn appearance_node<'p, T: Real>(
        &self,
        g: &mut Graph<'p, T>,
        params: &'p ParamStore<T>,
        app: &Appearance,
        rays: usize,
    ) -> Result<Var> {
        let d = self.config.appearance_dim;
        match app {
            Appearance::PerRay(idx) => {
                if idx.len() != rays {
                    return Err(Error::shape("appearance", &[idx.len()], &[rays]));
                }
                if let Some(&bad) = idx.iter().find(|&&i| i >= self.num_appearance) {
                    return Err(Error::UnknownAppearance {
                        index: bad,
                        count: self.num_appearance,
                    });
                }
                let table = g.param(params, "field.appearance")?;
                g.gather_rows(table, idx.clone())
            }
            Appearance::Fixed(v) => {
                if v.len() != d {
                    return Err(Error::shape("appearance", &[v.len()], &[d]));
                }
                let vals = (0..rays).flat_map(|_| v.iter().map(|x| T::of(*x))).collect();
                g.constant(&[rays, d], vals)
            }
        }
    }

    fn direction_encoding<T: Real>(&self, g: &mut Graph<'_, T>, dirs: &[Vec3]) -> Result<Var> {
        let level = ShLevel::new(self.config.direction_level)?;
        let k = level.components();
        let mut vals = Vec::with_capacity(dirs.len() * k);
        for d in dirs {
            vals.extend(sh_basis(*d, level)?.into_iter().map(T::of));
        }
        g.constant(&[dirs.len(), k], vals)
    }

    fn density<T: Real>(g: &mut Graph<'_, T>, pre: Var) -> Var {
        let c = g.clamp(pre, -SIGMA_CLAMP, SIGMA_CLAMP);
        g.exp(c)
    }

    pub fn forward<'p, T: Real>(
        &self,
        g: &mut Graph<'p, T>,
        params: &'p ParamStore<T>,
        batch: &PointBatch<'_>,
    ) -> Result<FieldVars> {
        self.forward_with(g, params, batch, false)
    }

    /// Forward pass. With `symmetric_x`, the test1 tuning factor is replaced
    /// by `1 - y`, which collapses its blend onto the enhance blend.
    pub fn forward_with<'p, T: Real>(
        &self,
        g: &mut Graph<'p, T>,
        params: &'p ParamStore<T>,
        batch: &PointBatch<'_>,
        symmetric_x: bool,
    ) -> Result<FieldVars> {
        let c = &self.config;
        let v = c.variant;
        let n = batch.points.len();
        if n == 0 || batch.per_ray == 0 || n != batch.rays() * batch.per_ray {
            return Err(Error::shape("field", &[n], &[batch.rays(), batch.per_ray]));
        }
        let xs: Vec<Vec3> = batch.points.iter().map(|&p| contract_unchecked(p)).collect();
        let table = g.param(params, "field.hash")?;
        let x_enc = hash_encode(g, &c.hash, table, &xs)?;
        let spatial_layers = c.spatial_layers;

        let (sigma_pre, coarse_pre, y_pre, geo) = match v {
            Variant::Test2 => {
                let code = mlp_forward(g, params, "field.spatial", spatial_layers, x_enc)?;
                let feat = mlp_forward(g, params, "decoder.coarse", c.decoder_layers, code)?;
                let out = mlp_forward(g, params, "head.spatial", 1, feat)?;
                (
                    g.slice_cols(out, 0, 1)?,
                    Some(g.slice_cols(out, 1, 3)?),
                    Some(g.slice_cols(out, 4, 1)?),
                    None,
                )
            }
            _ => {
                let input = if v.has_decoders() {
                    let dec = mlp_forward(g, params, "decoder.coarse", c.decoder_layers, x_enc)?;
                    g.concat(&[x_enc, dec])?
                } else {
                    x_enc
                };
                let out = mlp_forward(g, params, "field.spatial", spatial_layers, input)?;
                if v == Variant::NoMultiperf {
                    (g.slice_cols(out, 0, 1)?, None, None, Some(g.slice_cols(out, 1, c.geo_dim)?))
                } else {
                    (
                        g.slice_cols(out, 0, 1)?,
                        Some(g.slice_cols(out, 1, 3)?),
                        Some(g.slice_cols(out, 4, 1)?),
                        Some(g.slice_cols(out, 5, c.geo_dim)?),
                    )
                }
            }
        };
        let sigma = Self::density(g, sigma_pre);
        let c_coarse = coarse_pre.map(|p| g.sigmoid(p));
        let y = y_pre.map(|p| g.sigmoid(p));

        // directional branch, per ray unless it also reads spatial features
        let rays = batch.rays();
        let d_enc = self.direction_encoding(g, batch.dirs)?;
        let app = self.appearance_node(g, params, batch.appearance, rays)?;
        let mut parts = vec![d_enc];
        if !matches!(v, Variant::NoPretrained | Variant::Test2) {
            parts.push(mlp_forward(g, params, "decoder.fine", c.decoder_layers, d_enc)?);
        }
        parts.push(app);
        let ray_index = batch.ray_of_points();
        let per_point = self.directional_uses_geo();
        let mut dir_in = g.concat(&parts)?;
        if per_point {
            let expanded = g.gather_rows(dir_in, ray_index.clone())?;
            let geo = geo.expect("variants reading geo features produce them");
            dir_in = g.concat(&[expanded, geo])?;
        }
        let dir_out = mlp_forward(g, params, "field.dir", c.directional_layers, dir_in)?;
        let (mid_pre, x_pre) = match v {
            Variant::Test2 => {
                let feat = mlp_forward(g, params, "decoder.fine", c.decoder_layers, dir_out)?;
                (mlp_forward(g, params, "head.dir", 1, feat)?, None)
            }
            Variant::Test1 => (g.slice_cols(dir_out, 0, 3)?, Some(g.slice_cols(dir_out, 3, 1)?)),
            _ => (dir_out, None),
        };
        let mut color = g.sigmoid(mid_pre);
        let mut x_factor = x_pre.map(|p| g.sigmoid(p));
        if !per_point {
            color = g.gather_rows(color, ray_index.clone())?;
            x_factor = x_factor.map(|x| g.gather_rows(x, ray_index.clone())).transpose()?;
        }

        if v == Variant::NoMultiperf {
            return Ok(FieldVars {
                sigma,
                c_fine: color,
                c_mid: None,
                c_coarse: None,
                y: None,
                x_factor: None,
            });
        }
        let (c_coarse, y) = (c_coarse.unwrap(), y.unwrap());
        let c_fine = match (v, x_factor) {
            (Variant::Test1, Some(x)) => {
                let x = if symmetric_x { g.affine(y, -1.0, 1.0) } else { x };
                joint_color_test1(g, x, y, color, c_coarse)?
            }
            _ => joint_color(g, y, color, c_coarse)?,
        };
        Ok(FieldVars {
            sigma,
            c_fine,
            c_mid: Some(color),
            c_coarse: Some(c_coarse),
            y: Some(y),
            x_factor,
        })
    }

    /// Density of proposal network `round` at the given world points, `[n, 1]`.
    pub fn proposal_density<'p, T: Real>(
        &self,
        g: &mut Graph<'p, T>,
        params: &'p ParamStore<T>,
        round: usize,
        points: &[Vec3],
    ) -> Result<Var> {
        if round >= self.config.proposal_rounds {
            return Err(Error::InvalidArgument(format!("no proposal network {round}")));
        }
        let xs: Vec<Vec3> = points.iter().map(|&p| contract_unchecked(p)).collect();
        let p = format!("prop{round}");
        let table = g.param(params, &format!("{p}.hash"))?;
        let enc = hash_encode(g, &self.config.proposal_hash, table, &xs)?;
        let out = mlp_forward(g, params, &p, 2, enc)?;
        Ok(Self::density(g, out))
    }

    /// Hash tables and the appearance table, which train with the larger rate.
    pub fn is_table(name: &str) -> bool {
        name.ends_with(".hash") || name == "field.appearance"
    }
}
