use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{composite_graph, segment_sum, volume_weights, ImageBuf, Rgb};
use crate::diffcore::{Graph, ParamStore, Real, Var};
use crate::error::{Error, Result};
use crate::field::{Appearance, Field, PointBatch, Variant};
use crate::geometry::{
    ray_from_pixel, resample_pdf, sample_piecewise, Intrinsics, Pose, Ray, RaySamples, SamplerConfig, Vec3,
    WeightHistogram,
};

/// Interval edges used for every ray in a batch: `rounds[0]` is the initial
/// piecewise sampling, `rounds[k]` the output of proposal round `k`, and the
/// last entry feeds the radiance field.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub rounds: Vec<Vec<RaySamples>>,
}

impl SamplingPlan {
    pub fn nerf(&self) -> &[RaySamples] {
        self.rounds.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, Copy)]
pub enum PlanSource<'a> {
    /// Draw a fresh plan. With `jitter`, ray `i` uses the ChaCha8 stream `i`
    /// of `seed`; without it the plan is deterministic.
    Sample { seed: u64, jitter: bool },
    /// Reuse a plan, e.g. to hold sampling fixed under finite differences.
    Fixed(&'a SamplingPlan),
}

/// What is shared by every batch rendered from one model.
#[derive(Debug, Clone, Copy)]
pub struct RenderContext<'a> {
    pub field: &'a Field,
    pub sampler: &'a SamplerConfig,
    pub background: Rgb,
}

/// Graph nodes for one batch. Colors are `[rays, 3]`, `acc` is `[rays, 1]`,
/// weights are `[rays * samples, 1]`.
#[derive(Debug, Clone)]
pub struct BatchRender {
    pub fine: Var,
    pub mid: Option<Var>,
    pub coarse: Option<Var>,
    pub acc: Var,
    pub weights: Var,
    /// Per proposal round, weights over `plan.rounds[k]`.
    pub prop_weights: Vec<Var>,
    pub plan: SamplingPlan,
    pub depth: Vec<f64>,
}

fn points_and_deltas(rays: &[Ray], samples: &[RaySamples]) -> Result<(Vec<Vec3>, Vec<f64>, usize)> {
    let per = samples[0].len();
    let mut points = Vec::with_capacity(rays.len() * per);
    let mut deltas = Vec::with_capacity(rays.len() * per);
    for (ray, s) in rays.iter().zip(samples) {
        if s.len() != per {
            return Err(Error::shape("render_batch", &[s.len()], &[per]));
        }
        points.extend(s.midpoints().into_iter().map(|t| ray.at(t)));
        deltas.extend(s.deltas());
    }
    Ok((points, deltas, per))
}

pub fn render_batch<'p, T: Real>(
    g: &mut Graph<'p, T>,
    ctx: &RenderContext<'_>,
    params: &'p ParamStore<T>,
    rays: &[Ray],
    appearance: &Appearance,
    source: PlanSource<'_>,
) -> Result<BatchRender> {
    let rounds = ctx.field.config.proposal_rounds;
    let sampler = ctx.sampler;
    if rays.is_empty() {
        return Err(Error::InvalidArgument("render_batch needs at least one ray".into()));
    }
    if sampler.resample_counts.len() != rounds {
        return Err(Error::Config(format!(
            "{} resample counts for {rounds} proposal rounds",
            sampler.resample_counts.len()
        )));
    }
    let mut rngs: Option<Vec<ChaCha8Rng>> = match source {
        PlanSource::Sample { seed, jitter: true } => Some(
            (0..rays.len())
                .map(|i| {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    r.set_stream(i as u64);
                    r
                })
                .collect(),
        ),
        _ => None,
    };
    let mut current = match source {
        PlanSource::Fixed(plan) => {
            if plan.rounds.len() != rounds + 1 || plan.rounds.iter().any(|r| r.len() != rays.len()) {
                return Err(Error::InvalidArgument("sampling plan does not match the batch".into()));
            }
            plan.rounds[0].clone()
        }
        PlanSource::Sample { .. } => {
            let mut out = Vec::with_capacity(rays.len());
            for (i, ray) in rays.iter().enumerate() {
                let rng = rngs.as_mut().map(|v| &mut v[i]);
                out.push(sample_piecewise(ray, sampler.n_uniform, sampler.n_log, sampler.t_split, rng)?);
            }
            out
        }
    };
    let mut plan_rounds = vec![current.clone()];
    let mut prop_weights = Vec::with_capacity(rounds);

    for k in 0..rounds {
        let (points, deltas, per) = points_and_deltas(rays, &current)?;
        let sigma = ctx.field.proposal_density(g, params, k, &points)?;
        let w = volume_weights(g, sigma, deltas, per)?;
        prop_weights.push(w);
        current = match source {
            PlanSource::Fixed(plan) => plan.rounds[k + 1].clone(),
            PlanSource::Sample { .. } => {
                let wv = g.value(w);
                let mut next = Vec::with_capacity(rays.len());
                for (i, s) in current.iter().enumerate() {
                    let mut ws: Vec<f64> = wv[i * per..(i + 1) * per].iter().map(|v| v.f64().max(0.0)).collect();
                    let total: f64 = ws.iter().sum();
                    if total > 1.0 {
                        ws.iter_mut().for_each(|v| *v /= total);
                    }
                    let hist = WeightHistogram::new(s.edges().to_vec(), ws)?;
                    let rng = rngs.as_mut().map(|v| &mut v[i]);
                    next.push(resample_pdf(&hist, sampler.resample_counts[k], sampler.pdf_padding, rng)?);
                }
                next
            }
        };
        plan_rounds.push(current.clone());
    }

    let (points, deltas, per) = points_and_deltas(rays, &current)?;
    let dirs: Vec<Vec3> = rays.iter().map(|r| r.direction).collect();
    let batch = PointBatch {
        points: &points,
        dirs: &dirs,
        per_ray: per,
        appearance,
    };
    let v = ctx.field.forward(g, params, &batch)?;
    let weights = volume_weights(g, v.sigma, deltas, per)?;
    let acc = segment_sum(g, weights, per)?;
    let fine = composite_graph(g, weights, acc, v.c_fine, per, ctx.background)?;
    let mid = match v.c_mid {
        Some(c) => Some(composite_graph(g, weights, acc, c, per, ctx.background)?),
        None => None,
    };
    let coarse = match v.c_coarse {
        Some(c) => Some(composite_graph(g, weights, acc, c, per, ctx.background)?),
        None => None,
    };

    let wv = g.value(weights);
    let av = g.value(acc);
    let depth = current
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let wt: f64 = s.midpoints().iter().enumerate().map(|(j, t)| wv[i * per + j].f64() * t).sum();
            wt / av[i].f64().max(1e-10)
        })
        .collect();

    Ok(BatchRender {
        fine,
        mid,
        coarse,
        acc,
        weights,
        prop_weights,
        plan: SamplingPlan { rounds: plan_rounds },
        depth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Fine,
    Mid,
    Coarse,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Fine, Channel::Mid, Channel::Coarse];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Fine => "fine",
            Channel::Mid => "mid",
            Channel::Coarse => "coarse",
        }
    }

    pub fn available(self, variant: Variant) -> bool {
        self == Channel::Fine || variant.has_split_colors()
    }
}

impl std::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fine" => Ok(Channel::Fine),
            "mid" => Ok(Channel::Mid),
            "coarse" => Ok(Channel::Coarse),
            _ => Err(Error::InvalidArgument(format!("unknown channel '{s}' (expected fine, mid or coarse)"))),
        }
    }
}

/// Plain per-ray results of inference.
#[derive(Debug, Clone, Default)]
pub struct RenderedRays {
    pub fine: Vec<Rgb>,
    pub mid: Option<Vec<Rgb>>,
    pub coarse: Option<Vec<Rgb>>,
    pub acc: Vec<f64>,
    pub depth: Vec<f64>,
}

fn rgb_rows<T: Real>(v: &[T]) -> Vec<Rgb> {
    v.chunks(3).map(|c| [c[0].f64(), c[1].f64(), c[2].f64()]).collect()
}

/// Deterministic inference in chunks of `chunk` rays. A `PerRay` appearance
/// must list one index per ray.
pub fn render_rays<T: Real>(
    ctx: &RenderContext<'_>,
    params: &ParamStore<T>,
    rays: &[Ray],
    appearance: &Appearance,
    chunk: usize,
) -> Result<RenderedRays> {
    if let Appearance::PerRay(ix) = appearance {
        if ix.len() != rays.len() {
            return Err(Error::shape("render_rays", &[ix.len()], &[rays.len()]));
        }
    }
    let split = ctx.field.variant().has_split_colors();
    let mut out = RenderedRays {
        mid: split.then(Vec::new),
        coarse: split.then(Vec::new),
        ..Default::default()
    };
    for (c, part) in rays.chunks(chunk.max(1)).enumerate() {
        let app = match appearance {
            Appearance::PerRay(ix) => {
                let start = c * chunk.max(1);
                Appearance::PerRay(ix[start..start + part.len()].to_vec())
            }
            fixed => fixed.clone(),
        };
        let mut g = Graph::new();
        let b = render_batch(&mut g, ctx, params, part, &app, PlanSource::Sample { seed: 0, jitter: false })?;
        out.fine.extend(rgb_rows(g.value(b.fine)));
        if let (Some(dst), Some(v)) = (out.mid.as_mut(), b.mid) {
            dst.extend(rgb_rows(g.value(v)));
        }
        if let (Some(dst), Some(v)) = (out.coarse.as_mut(), b.coarse) {
            dst.extend(rgb_rows(g.value(v)));
        }
        out.acc.extend(g.value(b.acc).iter().map(|v| v.f64()));
        out.depth.extend(b.depth);
    }
    Ok(out)
}

/// One camera view: pinhole model plus bounds.
#[derive(Debug, Clone, Copy)]
pub struct View {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

impl View {
    pub fn rays(&self) -> Result<Vec<Ray>> {
        let mut rays = Vec::with_capacity((self.width * self.height) as usize);
        for v in 0..self.height {
            for u in 0..self.width {
                rays.push(ray_from_pixel(&self.intrinsics, &self.pose, (u, v), (self.near, self.far), 0)?);
            }
        }
        Ok(rays)
    }
}

#[derive(Debug, Clone)]
pub struct ViewImages {
    pub fine: ImageBuf,
    pub mid: Option<ImageBuf>,
    pub coarse: Option<ImageBuf>,
    pub depth: Vec<f64>,
    variant: Variant,
}

impl ViewImages {
    pub fn channel(&self, c: Channel) -> Result<&ImageBuf> {
        let img = match c {
            Channel::Fine => Some(&self.fine),
            Channel::Mid => self.mid.as_ref(),
            Channel::Coarse => self.coarse.as_ref(),
        };
        img.ok_or_else(|| Error::ChannelUnavailable {
            channel: c.name().into(),
            variant: self.variant.name().into(),
        })
    }
}

fn to_image(w: u32, h: u32, px: &[Rgb]) -> ImageBuf {
    let mut img = ImageBuf::new(w, h);
    for (i, c) in px.iter().enumerate() {
        img.set_pixel(i as u32 % w, i as u32 / w, *c);
    }
    img
}

/// Renders every pixel of `view` with a single appearance vector.
pub fn render_view<T: Real>(
    ctx: &RenderContext<'_>,
    params: &ParamStore<T>,
    view: &View,
    appearance: &[f64],
    chunk: usize,
) -> Result<ViewImages> {
    let rays = view.rays()?;
    let r = render_rays(ctx, params, &rays, &Appearance::Fixed(appearance.to_vec()), chunk)?;
    let (w, h) = (view.width, view.height);
    Ok(ViewImages {
        fine: to_image(w, h, &r.fine),
        mid: r.mid.as_deref().map(|m| to_image(w, h, m)),
        coarse: r.coarse.as_deref().map(|m| to_image(w, h, m)),
        depth: r.depth,
        variant: ctx.field.variant(),
    })
}
