use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Ray, RaySamples, WeightHistogram};

/// Sample counts for the piecewise initial sampler and the proposal rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub n_uniform: usize,
    pub n_log: usize,
    pub t_split: f64,
    /// Sample count produced by each histogram resampling round, in order.
    /// The last round feeds the radiance field.
    pub resample_counts: Vec<usize>,
    /// Mass added to every bin before a histogram is normalised.
    pub pdf_padding: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_uniform: 32,
            n_log: 32,
            t_split: 1.0,
            resample_counts: vec![48, 32],
            pdf_padding: 1e-2,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_uniform == 0 || self.n_log == 0 {
            return Err(Error::Config("sampling counts must be positive".into()));
        }
        if self.resample_counts.is_empty() || self.resample_counts.contains(&0) {
            return Err(Error::Config("resample_counts must be non-empty and positive".into()));
        }
        if !(self.pdf_padding >= 0.0) {
            return Err(Error::Config("pdf_padding must be non-negative".into()));
        }
        Ok(())
    }
}

/// Uniform intervals on `[t_near, t_split]` followed by geometrically growing
/// intervals on `[t_split, t_far]`. With `jitter`, every interior edge moves
/// to a random point between the midpoints of its two neighbouring intervals.
pub fn sample_piecewise<R: Rng + ?Sized>(
    ray: &Ray,
    n_uniform: usize,
    n_log: usize,
    t_split: f64,
    jitter: Option<&mut R>,
) -> Result<RaySamples> {
    if !(t_split > ray.t_near && t_split < ray.t_far) {
        return Err(Error::InvalidArgument(format!(
            "t_split {t_split} must lie inside ({}, {})",
            ray.t_near, ray.t_far
        )));
    }
    if n_uniform == 0 || n_log == 0 {
        return Err(Error::InvalidArgument("sample counts must be positive".into()));
    }
    let mut edges = Vec::with_capacity(n_uniform + n_log + 1);
    let step = (t_split - ray.t_near) / n_uniform as f64;
    for i in 0..n_uniform {
        edges.push(ray.t_near + step * i as f64);
    }
    let ratio = (ray.t_far / t_split).powf(1.0 / n_log as f64);
    for k in 0..n_log {
        edges.push(t_split * ratio.powi(k as i32));
    }
    edges.push(ray.t_far);
    if let Some(rng) = jitter {
        stratify(&mut edges, rng);
    }
    RaySamples::new(edges)
}

/// `n` equal intervals spanning the ray.
pub fn uniform_samples(t_near: f64, t_far: f64, n: usize) -> Result<RaySamples> {
    if n == 0 || !(t_far > t_near) {
        return Err(Error::InvalidArgument("uniform_samples needs n > 0 and t_far > t_near".into()));
    }
    let step = (t_far - t_near) / n as f64;
    let mut edges: Vec<f64> = (0..n).map(|i| t_near + step * i as f64).collect();
    edges.push(t_far);
    RaySamples::new(edges)
}

fn stratify<R: Rng + ?Sized>(edges: &mut [f64], rng: &mut R) {
    let mids: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let n = edges.len();
    for i in 1..n - 1 {
        let u: f64 = rng.random();
        edges[i] = mids[i - 1] + u * (mids[i] - mids[i - 1]);
    }
}

/// Draws `n` intervals by inverse-transform sampling the piecewise-constant
/// density of `hist` after adding `padding` to every bin.
///
/// Without `jitter` the quantiles are `k / n`; with it, every interior
/// quantile is drawn uniformly from its stratum. The outer edges are the
/// span of the bins that carry mass, so with positive padding they equal
/// the histogram span.
pub fn resample_pdf<R: Rng + ?Sized>(
    hist: &WeightHistogram,
    n: usize,
    padding: f64,
    jitter: Option<&mut R>,
) -> Result<RaySamples> {
    if n == 0 {
        return Err(Error::InvalidArgument("resample_pdf needs n >= 1".into()));
    }
    let e = &hist.edges;
    let bins = hist.weights.len();
    let mut mass: Vec<f64> = hist.weights.iter().map(|w| w.max(0.0) + padding).collect();
    let mut total: f64 = mass.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        mass = e.windows(2).map(|w| w[1] - w[0]).collect();
        total = e[bins] - e[0];
    }
    let mut cdf = Vec::with_capacity(bins + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for m in &mut mass {
        *m /= total;
        acc += *m;
        cdf.push(acc);
    }
    cdf[bins] = 1.0;

    let first = mass.iter().position(|&m| m > 0.0).unwrap_or(0);
    let last = mass.iter().rposition(|&m| m > 0.0).unwrap_or(bins - 1);

    let mut us = Vec::with_capacity(n + 1);
    us.push(0.0);
    match jitter {
        Some(rng) => {
            for k in 1..n {
                let j: f64 = rng.random();
                us.push((k as f64 + j - 0.5) / n as f64);
            }
        }
        None => {
            for k in 1..n {
                us.push(k as f64 / n as f64);
            }
        }
    }
    us.push(1.0);

    let mut out = Vec::with_capacity(n + 1);
    for (k, &u) in us.iter().enumerate() {
        let t = if k == 0 {
            e[first]
        } else if k == n {
            e[last + 1]
        } else {
            let j = cdf[1..].partition_point(|&c| c <= u).min(bins - 1);
            let frac = if mass[j] > 0.0 { (u - cdf[j]) / mass[j] } else { 0.0 };
            (e[j] + frac.clamp(0.0, 1.0) * (e[j + 1] - e[j])).clamp(e[j], e[j + 1])
        };
        let t = match out.last() {
            Some(&prev) if t <= prev => f64::next_up(prev),
            _ => t,
        };
        out.push(t);
    }
    // the bump above can only push past the end by a few ulps
    let end = e[last + 1];
    if out[n] < end {
        out[n] = end;
    }
    RaySamples::new(out)
}
