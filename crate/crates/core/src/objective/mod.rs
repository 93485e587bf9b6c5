//! Training loss (interlevel proposal loss, fine MSE, SH color terms) and
//! image metrics.

mod metrics;

pub use metrics::{psnr, ssim, PSNR_CAP};

use serde::{Deserialize, Serialize};

use crate::diffcore::{CustomOp, Graph, Real, Var};
use crate::encoders::{sh_color_encode, sh_color_encode_graph, RangeMode, ShLevel};
use crate::error::{Error, Result};
use crate::geometry::{RaySamples, WeightHistogram};
use crate::renderer::{BatchRender, RenderedPixel, Rgb};

const EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub sh_fine: ShLevel,
    pub sh_mid: ShLevel,
    pub sh_coarse: ShLevel,
    /// Multiplier on the summed proposal loss.
    pub prop_weight: f64,
    /// When false, the three SH terms are reported as 0.
    pub sh_terms: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            sh_fine: ShLevel::new(4).unwrap(),
            sh_mid: ShLevel::new(3).unwrap(),
            sh_coarse: ShLevel::new(2).unwrap(),
            prop_weight: 1.0,
            sh_terms: true,
        }
    }
}

/// Loss components, each averaged over the ray batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub prop: f64,
    pub fine_mse: f64,
    pub sh_fine: f64,
    pub sh_mid: f64,
    pub sh_coarse: f64,
}

fn same_span(a: &[f64], b: &[f64]) -> bool {
    let tol = |x: f64, y: f64| (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0);
    tol(a[0], b[0]) && tol(*a.last().unwrap(), *b.last().unwrap())
}

/// NeRF mass in every proposal bin: the summed weight of the NeRF intervals
/// that overlap the bin with positive length.
fn overlap_mass(nerf_edges: &[f64], nerf_w: &[f64], prop_edges: &[f64]) -> Vec<f64> {
    let bins = prop_edges.len() - 1;
    let mut out = vec![0.0; bins];
    let mut j0 = 0;
    for (b, o) in out.iter_mut().enumerate() {
        let (lo, hi) = (prop_edges[b], prop_edges[b + 1]);
        while j0 < nerf_w.len() && nerf_edges[j0 + 1] <= lo {
            j0 += 1;
        }
        let mut j = j0;
        while j < nerf_w.len() && nerf_edges[j] < hi {
            *o += nerf_w[j];
            j += 1;
        }
    }
    out
}

fn penalty(overlap: f64, w: f64) -> (f64, f64) {
    let r = overlap - w;
    if r <= 0.0 {
        return (0.0, 0.0);
    }
    let d = w + EPS;
    (r * r / d, -2.0 * r / d - r * r / (d * d))
}

/// Proposal histogram penalty `sum max(0, overlap - w_hat)^2 / (w_hat + 1e-7)`.
pub fn loss_interlevel(nerf: &WeightHistogram, prop: &WeightHistogram) -> Result<f64> {
    if !same_span(&nerf.edges, &prop.edges) {
        return Err(Error::InvalidArgument(format!(
            "interlevel spans differ: {:?} vs {:?}",
            nerf.span(),
            prop.span()
        )));
    }
    let o = overlap_mass(&nerf.edges, &nerf.weights, &prop.edges);
    Ok(o.iter().zip(&prop.weights).map(|(&o, &w)| penalty(o, w).0).sum())
}

struct Interlevel {
    overlaps: Vec<f64>,
    rays: usize,
}

impl<T: Real> CustomOp<T> for Interlevel {
    fn name(&self) -> &'static str {
        "interlevel"
    }

    fn backward(&self, inputs: &[&[T]], _output: &[T], grad_out: &[T], grads: &mut [Option<&mut [T]>]) {
        let Some(gw) = grads[0].as_deref_mut() else { return };
        let s = grad_out[0].f64() / self.rays as f64;
        for ((gi, &w), &o) in gw.iter_mut().zip(inputs[0]).zip(&self.overlaps) {
            *gi += T::of(s * penalty(o, w.f64()).1);
        }
    }
}

/// Batch-mean interlevel loss. `prop_w` is the `[rays * m, 1]` proposal
/// weight node over `prop_edges`; the NeRF histogram enters as plain values
/// and receives no gradient.
pub fn interlevel_graph<T: Real>(
    g: &mut Graph<'_, T>,
    prop_w: Var,
    prop_edges: &[RaySamples],
    nerf_edges: &[RaySamples],
    nerf_w: &[f64],
) -> Result<Var> {
    let rays = prop_edges.len();
    if rays == 0 || nerf_edges.len() != rays {
        return Err(Error::shape("interlevel", &[prop_edges.len()], &[nerf_edges.len()]));
    }
    let m = prop_edges[0].len();
    let n = nerf_edges[0].len();
    if g.value(prop_w).len() != rays * m || nerf_w.len() != rays * n {
        return Err(Error::shape("interlevel", g.shape(prop_w), &[rays * m, 1]));
    }
    let mut overlaps = Vec::with_capacity(rays * m);
    for r in 0..rays {
        let (pe, ne) = (prop_edges[r].edges(), nerf_edges[r].edges());
        if pe.len() != m + 1 || ne.len() != n + 1 {
            return Err(Error::shape("interlevel", &[pe.len() - 1], &[m]));
        }
        if !same_span(pe, ne) {
            return Err(Error::InvalidArgument(format!("interlevel spans differ on ray {r}")));
        }
        overlaps.extend(overlap_mass(ne, &nerf_w[r * n..(r + 1) * n], pe));
    }
    let total: f64 = g
        .value(prop_w)
        .iter()
        .zip(&overlaps)
        .map(|(&w, &o)| penalty(o, w.f64()).0)
        .sum::<f64>()
        / rays as f64;
    g.custom(&[prop_w], &[1], vec![T::of(total)], Box::new(Interlevel { overlaps, rays }))
}

fn sum_sq<T: Real>(g: &mut Graph<'_, T>, a: Var, b: Var, scale: f64) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d2 = g.mul(d, d)?;
    let s = g.sum(d2);
    Ok(g.affine(s, scale, 0.0))
}

fn sh_term<T: Real>(g: &mut Graph<'_, T>, c: Var, gt: &[Rgb], level: ShLevel, scale: f64) -> Result<Var> {
    let enc = sh_color_encode_graph(g, c, level, RangeMode::Clamp)?;
    let mut target = Vec::with_capacity(gt.len() * level.components());
    for &p in gt {
        target.extend(sh_color_encode(p, level, RangeMode::Clamp)?.into_iter().map(T::of));
    }
    let t = g.constant(&[gt.len(), level.components()], target)?;
    sum_sq(g, enc, t, scale)
}

/// Graph nodes of the loss. `total` is the node to backpropagate.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub prop: Var,
    pub fine_mse: Var,
    pub sh_fine: Option<Var>,
    pub sh_mid: Option<Var>,
    pub sh_coarse: Option<Var>,
}

impl LossVars {
    /// Component values; `total` is their sum in f64, so it matches the
    /// graph's `total` node up to that node's own rounding.
    pub fn breakdown<T: Real>(&self, g: &Graph<'_, T>) -> LossBreakdown {
        let v = |x: Option<Var>| x.map(|x| g.value(x)[0].f64()).unwrap_or(0.0);
        let mut b = LossBreakdown {
            total: 0.0,
            prop: v(Some(self.prop)),
            fine_mse: v(Some(self.fine_mse)),
            sh_fine: v(self.sh_fine),
            sh_mid: v(self.sh_mid),
            sh_coarse: v(self.sh_coarse),
        };
        b.total = b.prop + b.fine_mse + b.sh_fine + b.sh_mid + b.sh_coarse;
        b
    }
}

/// Batch loss for a rendered batch against ground-truth pixels. The NeRF
/// weights used by the proposal terms are read as values (detached).
pub fn loss_graph<T: Real>(g: &mut Graph<'_, T>, render: &BatchRender, gt: &[Rgb], cfg: &LossConfig) -> Result<LossVars> {
    loss_graph_with(g, render, gt, cfg, None)
}

/// As [`loss_graph`], optionally with the detached NeRF weights supplied
/// explicitly so that finite differences can hold them fixed.
pub fn loss_graph_with<T: Real>(
    g: &mut Graph<'_, T>,
    render: &BatchRender,
    gt: &[Rgb],
    cfg: &LossConfig,
    nerf_weights: Option<&[f64]>,
) -> Result<LossVars> {
    let rays = gt.len();
    if g.rows(render.fine) != rays {
        return Err(Error::shape("loss", g.shape(render.fine), &[rays, 3]));
    }
    if let Some(bad) = gt.iter().find(|c| c.iter().any(|v| !(0.0..=1.0).contains(v))) {
        return Err(Error::InvalidArgument(format!("ground-truth color {bad:?} outside [0, 1]")));
    }
    let scale = 1.0 / rays as f64;
    let gt_flat: Vec<T> = gt.iter().flat_map(|c| c.map(T::of)).collect();
    let gt_var = g.constant(&[rays, 3], gt_flat)?;
    let fine_mse = sum_sq(g, render.fine, gt_var, scale)?;

    let nerf_w: Vec<f64> = match nerf_weights {
        Some(w) => w.to_vec(),
        None => g.value(render.weights).iter().map(|v| v.f64()).collect(),
    };
    let nerf_edges = render.plan.nerf().to_vec();
    let mut prop = g.scalar(T::zero());
    for (k, &pw) in render.prop_weights.iter().enumerate() {
        let l = interlevel_graph(g, pw, &render.plan.rounds[k], &nerf_edges, &nerf_w)?;
        prop = g.add(prop, l)?;
    }
    let prop = g.affine(prop, cfg.prop_weight, 0.0);
    let mut total = g.add(prop, fine_mse)?;

    let mut sh = [None; 3];
    if cfg.sh_terms {
        for (slot, (c, level)) in sh.iter_mut().zip([
            (Some(render.fine), cfg.sh_fine),
            (render.mid, cfg.sh_mid),
            (render.coarse, cfg.sh_coarse),
        ]) {
            if let Some(c) = c {
                let t = sh_term(g, c, gt, level, scale)?;
                total = g.add(total, t)?;
                *slot = Some(t);
            }
        }
    }
    Ok(LossVars {
        total,
        prop,
        fine_mse,
        sh_fine: sh[0],
        sh_mid: sh[1],
        sh_coarse: sh[2],
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Single-ray loss from plain values. `prop_hists[k]` is compared with
/// `nerf_hist`; missing mid/coarse colors contribute no SH term.
pub fn loss_total(
    pixel: &RenderedPixel,
    gt: Rgb,
    nerf_hist: &WeightHistogram,
    prop_hists: &[WeightHistogram],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let mut prop = 0.0;
    for h in prop_hists {
        prop += loss_interlevel(nerf_hist, h)?;
    }
    let prop = prop * cfg.prop_weight;
    let fine_mse = sq_dist(&pixel.fine, &gt);
    let mut sh = [0.0; 3];
    if cfg.sh_terms {
        for (slot, (c, level)) in sh.iter_mut().zip([
            (Some(pixel.fine), cfg.sh_fine),
            (pixel.mid, cfg.sh_mid),
            (pixel.coarse, cfg.sh_coarse),
        ]) {
            if let Some(c) = c {
                let a = sh_color_encode(gt, level, RangeMode::Clamp)?;
                let b = sh_color_encode(c, level, RangeMode::Clamp)?;
                *slot = sq_dist(&a, &b);
            }
        }
    }
    Ok(LossBreakdown {
        total: prop + fine_mse + sh.iter().sum::<f64>(),
        prop,
        fine_mse,
        sh_fine: sh[0],
        sh_mid: sh[1],
        sh_coarse: sh[2],
    })
}
