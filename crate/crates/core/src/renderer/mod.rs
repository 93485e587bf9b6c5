//! Emission-absorption compositing, as plain functions and as graph ops,
//! plus the batched sampling/field/compositing pipeline.

mod image_io;
mod pipeline;

pub use image_io::{write_pfm, write_png, ImageBuf};
pub use pipeline::{
    render_batch, render_rays, render_view, BatchRender, Channel, PlanSource, RenderContext, RenderedRays, SamplingPlan,
    View, ViewImages,
};

use crate::diffcore::{CustomOp, Graph, Real, Var};
use crate::error::{Error, Result};

pub type Rgb = [f64; 3];

pub const WHITE: Rgb = [1.0, 1.0, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPixel {
    pub fine: Rgb,
    pub mid: Option<Rgb>,
    pub coarse: Option<Rgb>,
    pub accumulation: f64,
    pub depth: f64,
    pub weights: Vec<f64>,
}

/// Per-sample color stacks sharing one set of weights.
#[derive(Debug, Clone, Copy)]
pub struct ColorStacks<'a> {
    pub fine: &'a [Rgb],
    pub mid: Option<&'a [Rgb]>,
    pub coarse: Option<&'a [Rgb]>,
}

/// `w_k = T_k (1 - exp(-sigma_k delta_k))` with `T_k` the transmittance
/// before sample `k`.
pub fn weights(sigmas: &[f64], deltas: &[f64]) -> Result<Vec<f64>> {
    if sigmas.len() != deltas.len() {
        return Err(Error::shape("composite", &[sigmas.len()], &[deltas.len()]));
    }
    if sigmas.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN density".into()));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::InvalidArgument(format!("negative density {s}")));
    }
    if let Some(d) = deltas.iter().find(|d| !(**d > 0.0)) {
        return Err(Error::InvalidArgument(format!("non-positive interval {d}")));
    }
    let mut tau = 0.0f64;
    Ok(sigmas
        .iter()
        .zip(deltas)
        .map(|(s, d)| {
            let t = (-tau).exp();
            let step = s * d;
            tau += step;
            t * -(-step).exp_m1()
        })
        .collect())
}

/// Composites one ray. `ts` are the sample positions used for depth.
pub fn composite(
    sigmas: &[f64],
    deltas: &[f64],
    ts: &[f64],
    colors: ColorStacks<'_>,
    background: Rgb,
) -> Result<RenderedPixel> {
    let n = sigmas.len();
    let lens = [ts.len(), colors.fine.len()]
        .into_iter()
        .chain(colors.mid.map(|c| c.len()))
        .chain(colors.coarse.map(|c| c.len()));
    for l in lens {
        if l != n {
            return Err(Error::shape("composite", &[n], &[l]));
        }
    }
    let w = weights(sigmas, deltas)?;
    let acc: f64 = w.iter().sum();
    let blend = |c: &[Rgb]| {
        let mut out = [0.0; 3];
        for (wk, ck) in w.iter().zip(c) {
            for a in 0..3 {
                out[a] += wk * ck[a];
            }
        }
        for a in 0..3 {
            out[a] += (1.0 - acc) * background[a];
        }
        out
    };
    let depth = w.iter().zip(ts).map(|(a, b)| a * b).sum::<f64>() / acc.max(1e-10);
    Ok(RenderedPixel {
        fine: blend(colors.fine),
        mid: colors.mid.map(blend),
        coarse: colors.coarse.map(blend),
        accumulation: acc,
        depth,
        weights: w,
    })
}

struct VolumeWeights {
    deltas: Vec<f64>,
    per_ray: usize,
}

impl<T: Real> CustomOp<T> for VolumeWeights {
    fn name(&self) -> &'static str {
        "volume_weights"
    }

    fn backward(&self, inputs: &[&[T]], output: &[T], grad_out: &[T], grads: &mut [Option<&mut [T]>]) {
        let Some(gs) = grads[0].as_deref_mut() else { return };
        let s = self.per_ray;
        for r in 0..inputs[0].len() / s {
            let sig = &inputs[0][r * s..(r + 1) * s];
            let w = &output[r * s..(r + 1) * s];
            let g = &grad_out[r * s..(r + 1) * s];
            let d = &self.deltas[r * s..(r + 1) * s];
            // dw_k/dtau_j = T_{j+1} when k == j, -w_k when k > j
            let mut tau = 0.0f64;
            let mut tail = 0.0;
            let mut t_next = vec![0.0; s];
            for j in 0..s {
                tau += sig[j].f64() * d[j];
                t_next[j] = (-tau).exp();
            }
            for j in (0..s).rev() {
                let gt = g[j].f64() * t_next[j] - tail;
                tail += g[j].f64() * w[j].f64();
                gs[r * s + j] += T::of(gt * d[j]);
            }
        }
    }
}

/// Graph version of [`weights`] for a ray-major `[rays * per_ray, 1]` density node.
pub fn volume_weights<T: Real>(g: &mut Graph<'_, T>, sigma: Var, deltas: Vec<f64>, per_ray: usize) -> Result<Var> {
    let n = g.value(sigma).len();
    if deltas.len() != n || per_ray == 0 || n % per_ray != 0 {
        return Err(Error::shape("volume_weights", g.shape(sigma), &[deltas.len(), per_ray]));
    }
    let sig: Vec<f64> = g.value(sigma).iter().map(|v| v.f64()).collect();
    let mut out = Vec::with_capacity(n);
    for (sr, dr) in sig.chunks(per_ray).zip(deltas.chunks(per_ray)) {
        out.extend(weights(sr, dr)?.into_iter().map(T::of));
    }
    g.custom(&[sigma], &[n, 1], out, Box::new(VolumeWeights { deltas, per_ray }))
}

struct SegmentSum {
    per_group: usize,
    cols: usize,
}

impl<T: Real> CustomOp<T> for SegmentSum {
    fn name(&self) -> &'static str {
        "segment_sum"
    }

    fn backward(&self, _inputs: &[&[T]], _output: &[T], grad_out: &[T], grads: &mut [Option<&mut [T]>]) {
        let Some(gx) = grads[0].as_deref_mut() else { return };
        let c = self.cols;
        for (r, row) in gx.chunks_mut(c).enumerate() {
            let src = &grad_out[(r / self.per_group) * c..(r / self.per_group + 1) * c];
            for (d, s) in row.iter_mut().zip(src) {
                *d += *s;
            }
        }
    }
}

/// Sums consecutive groups of `per_group` rows: `[g * per_group, c] -> [g, c]`.
pub fn segment_sum<T: Real>(g: &mut Graph<'_, T>, x: Var, per_group: usize) -> Result<Var> {
    let (rows, cols) = (g.rows(x), g.cols(x));
    if per_group == 0 || rows % per_group != 0 {
        return Err(Error::shape("segment_sum", g.shape(x), &[per_group]));
    }
    let groups = rows / per_group;
    let xv = g.value(x);
    let mut out = vec![0.0f64; groups * cols];
    for (r, row) in xv.chunks(cols).enumerate() {
        let dst = &mut out[(r / per_group) * cols..(r / per_group + 1) * cols];
        for (d, v) in dst.iter_mut().zip(row) {
            *d += v.f64();
        }
    }
    let out = out.into_iter().map(T::of).collect();
    g.custom(&[x], &[groups, cols], out, Box::new(SegmentSum { per_group, cols }))
}

/// Per-ray `sum_k w_k c_k + (1 - acc) * background` for `[n, 3]` colors
/// and `[n, 1]` weights. `acc` is the `[rays, 1]` accumulation node.
pub fn composite_graph<T: Real>(
    g: &mut Graph<'_, T>,
    weights: Var,
    acc: Var,
    colors: Var,
    per_ray: usize,
    background: Rgb,
) -> Result<Var> {
    let wc = g.mul(colors, weights)?;
    let fg = segment_sum(g, wc, per_ray)?;
    let rays = g.rows(fg);
    let bg: Vec<T> = (0..rays).flat_map(|_| background.map(T::of)).collect();
    let bg = g.constant(&[rays, 3], bg)?;
    let clear = g.affine(acc, -1.0, 1.0);
    let bgc = g.mul(bg, clear)?;
    g.add(fg, bgc)
}
