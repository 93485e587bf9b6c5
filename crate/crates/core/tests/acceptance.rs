//! Acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Optional arguments select criteria by substring, e.g.
//! `cargo test --test acceptance -- slab sh`. Set `ENERF_ACCEPTANCE_STRICT=1`
//! to turn any failure into a nonzero exit status.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use enerf::diffcore::gradcheck::{check_inputs, check_params, Report, Tolerance};
use enerf::diffcore::{Graph, ParamStore, Tensor, Var};
use enerf::encoders::{hash_encode, sh_basis, sh_color_encode, sh_color_encode_graph, HashEncodingConfig, RangeMode, ShLevel};
use enerf::field::{joint_color, joint_color_test1, joint_color_values, Appearance, Field, FieldConfig, PointBatch, Variant};
use enerf::geometry::{contract, normalize, uniform_samples, Ray, RaySamples, SamplerConfig, WeightHistogram};
use enerf::objective::{interlevel_graph, loss_graph_with, loss_interlevel, LossConfig};
use enerf::renderer::{
    composite, composite_graph, render_batch, segment_sum, volume_weights, ColorStacks, PlanSource, RenderContext,
    SamplingPlan, WHITE,
};
use enerf::scenegen::{generate_dataset, oracle_field, oracle_render, oracle_segments, CameraRig, GenOptions, OracleScene, Primitive};
use enerf::trainer::{evaluate, RunConfig, Trainer};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- oracle

fn random_ray(rng: &mut ChaCha8Rng) -> Ray {
    let phi = rng.random_range(0.0..2.0 * PI);
    let elev = rng.random_range(-0.3..1.2f64);
    let r = rng.random_range(2.5..3.5);
    let o = [r * elev.cos() * phi.cos(), r * elev.sin(), r * elev.cos() * phi.sin()];
    let target = [0, 1, 2].map(|_| rng.random_range(-1.0..1.0));
    let d = normalize([target[0] - o[0], target[1] - o[1], target[2] - o[2]]);
    Ray::new(o, d, 0.5, 6.0, 0).unwrap()
}

fn oracle_equivalence() -> Outcome {
    let t0 = Instant::now();
    let (mut worst, mut point_worst, mut fine_gap) = (0.0f64, 0.0f64, 0.0f64);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for name in ["default", "specular", "calibration"] {
        let scene = OracleScene::named(name).map_err(err)?;
        for _ in 0..100 {
            let ray = random_ray(&mut rng);
            let s = uniform_samples(ray.t_near, ray.t_far, 4096).map_err(err)?;
            let (ts, deltas) = (s.midpoints(), s.deltas());
            let reference = oracle_render(&scene, &ray, 4096).map_err(err)?;
            let finer = oracle_render(&scene, &ray, 4 * 4096).map_err(err)?;

            // each sample carries its interval's mean density
            let (tau, col): (Vec<f64>, Vec<[f64; 3]>) = oracle_segments(&scene, &ray, s.edges()).into_iter().unzip();
            let sig: Vec<f64> = tau.iter().zip(&deltas).map(|(t, d)| t / d).collect();
            let px = composite(&sig, &deltas, &ts, ColorStacks { fine: &col, mid: None, coarse: None }, scene.background)
                .map_err(err)?;

            // the field read at midpoints only, for reference
            let (psig, pcol): (Vec<f64>, Vec<[f64; 3]>) =
                ts.iter().map(|&t| oracle_field(&scene, ray.at(t), ray.direction)).unzip();
            let pp = composite(&psig, &deltas, &ts, ColorStacks { fine: &pcol, mid: None, coarse: None }, scene.background)
                .map_err(err)?;
            for k in 0..3 {
                worst = worst.max((px.fine[k] - reference[k]).abs());
                point_worst = point_worst.max((pp.fine[k] - reference[k]).abs());
                fine_gap = fine_gap.max((finer[k] - reference[k]).abs());
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(
        worst <= 1e-4 && secs < 60.0,
        format!(
            "max channel error {worst:.2e} on 300 rays (tol 1e-4), {secs:.1}s; for scale: midpoint-sampled field \
             {point_worst:.2e}, oracle 4096 vs 16384 intervals {fine_gap:.2e}"
        ),
    )
}

// ---------------------------------------------------------------- slab

fn analytic_slab() -> Outcome {
    let mut worst = 0.0f64;
    for (sigma, c, tn, tf) in [(0.7, [0.9, 0.2, 0.4], 0.5, 3.0), (3.0, [0.1, 0.8, 0.3], 1.0, 1.8), (0.05, [1.0, 1.0, 0.0], 0.2, 9.0)] {
        let s = uniform_samples(tn, tf, 4096).map_err(err)?;
        let n = s.len();
        let colors = vec![c; n];
        let px = composite(
            &vec![sigma; n],
            &s.deltas(),
            &s.midpoints(),
            ColorStacks { fine: &colors, mid: None, coarse: None },
            [0.0; 3],
        )
        .map_err(err)?;
        let a = 1.0 - (-sigma * (tf - tn)).exp();
        for k in 0..3 {
            worst = worst.max((px.fine[k] - a * c[k]).abs());
        }
    }
    // the same through the oracle scene path: a thick homogeneous box
    let scene = OracleScene {
        primitives: vec![Primitive::cuboid([0.0, 0.0, 0.0], [5.0, 5.0, 1.0], 1.3, [0.3, 0.6, 0.9])],
        background: [0.0; 3],
    };
    let ray = Ray::new([0.0, 0.0, 3.0], [0.0, 0.0, -1.0], 0.5, 6.0, 0).map_err(err)?;
    let s = uniform_samples(0.5, 6.0, 4096).map_err(err)?;
    let ts = s.midpoints();
    let (sig, col): (Vec<f64>, Vec<[f64; 3]>) = ts.iter().map(|&t| oracle_field(&scene, ray.at(t), ray.direction)).unzip();
    let px = composite(&sig, &s.deltas(), &ts, ColorStacks { fine: &col, mid: None, coarse: None }, [0.0; 3]).map_err(err)?;
    let a = 1.0 - (-1.3f64 * 2.0).exp();
    for k in 0..3 {
        worst = worst.max((px.fine[k] - a * scene.primitives[0].diffuse[k]).abs());
    }
    ensure(worst <= 1e-4, format!("max deviation from closed form {worst:.2e} (tol 1e-4)"))
}

// ---------------------------------------------------------------- gradients

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Random linear functional of `v`, so every output element carries a distinct weight.
fn project(g: &mut Graph<'_, f64>, v: Var, seed: u64) -> enerf::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.value(v).len();
    let w = g.constant(g.shape(v).to_vec().as_slice(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let m = g.mul(v, w)?;
    Ok(g.sum(m))
}

struct Suite {
    checked: usize,
    failures: Vec<String>,
}

impl Suite {
    fn record(&mut self, name: &str, r: enerf::Result<Report>) {
        match r {
            Ok(rep) => {
                self.checked += rep.checked;
                if !rep.passed() {
                    let m = rep.mismatches.first().map(|m| format!("{} [{}] {} vs {}", m.target, m.index, m.analytic, m.numeric));
                    self.failures.push(format!("{name}: {}", m.unwrap_or_else(|| "nothing checked".into())));
                }
            }
            Err(e) => self.failures.push(format!("{name}: {e}")),
        }
    }
}

fn small_field(variant: Variant) -> Field {
    let cfg = FieldConfig {
        variant,
        hash: HashEncodingConfig {
            table_size: 1 << 10,
            grid_resolution: 16,
            ..Default::default()
        },
        proposal_hash: HashEncodingConfig {
            table_size: 1 << 8,
            features_per_entry: 2,
            grid_resolution: 8,
            ..Default::default()
        },
        ..Default::default()
    };
    Field::new(cfg, 2).unwrap()
}

fn batch_rays() -> Vec<Ray> {
    (0..4)
        .map(|i| {
            let a = i as f64 * 1.3;
            let o = [3.0 * a.cos(), 0.4, 3.0 * a.sin()];
            Ray::new(o, normalize([-o[0], -0.4, -o[2]]), 0.5, 6.0, 0).unwrap()
        })
        .collect()
}

const GT: [[f64; 3]; 4] = [[0.9, 0.1, 0.2], [0.3, 0.8, 0.5], [0.0, 0.0, 1.0], [0.6, 0.6, 0.6]];

fn small_sampler() -> SamplerConfig {
    SamplerConfig {
        n_uniform: 4,
        n_log: 4,
        resample_counts: vec![6, 4],
        ..Default::default()
    }
}

#[allow(clippy::too_many_arguments)]
fn batch_loss<'a>(
    g: &mut Graph<'a, f64>,
    ps: &'a ParamStore<f64>,
    ctx: &RenderContext<'_>,
    app: &Appearance,
    plan: &SamplingPlan,
    cfg: &LossConfig,
    nerf_w: Option<&[f64]>,
) -> enerf::Result<Var> {
    let b = render_batch(g, ctx, ps, &batch_rays(), app, PlanSource::Fixed(plan))?;
    Ok(loss_graph_with(g, &b, &GT, cfg, nerf_w)?.total)
}

fn full_loss_check(variant: Variant) -> enerf::Result<Report> {
    let field = small_field(variant);
    let p = field.init_params::<f64>(7);
    let s = small_sampler();
    let ctx = RenderContext { field: &field, sampler: &s, background: WHITE };
    let app = Appearance::PerRay(vec![0, 1, 1, 0]);
    let mut g = Graph::new();
    let b = render_batch(&mut g, &ctx, &p, &batch_rays(), &app, PlanSource::Sample { seed: 9, jitter: true })?;
    let plan = b.plan;
    let nerf_w = g.value(b.weights).to_vec();
    let cfg = LossConfig {
        sh_terms: variant.has_split_colors(),
        ..Default::default()
    };
    let grads = {
        let mut g = Graph::new();
        let l = batch_loss(&mut g, &p, &ctx, &app, &plan, &cfg, None)?;
        g.backward(l)?;
        g.param_grads()
    };
    let mut sel = Vec::new();
    for (name, grad) in &grads {
        if p.get(name)?.frozen {
            continue;
        }
        let best = (0..grad.len()).max_by(|&a, &b| grad[a].abs().total_cmp(&grad[b].abs())).unwrap();
        sel.push((name.clone(), best));
        sel.push((name.clone(), (grad.len() * 5 / 7) % grad.len()));
    }
    // the proposal loss treats NeRF weights as constants, so hold them fixed under perturbation
    check_params(&p, &sel, Tolerance::default(), |g, ps| batch_loss(g, ps, &ctx, &app, &plan, &cfg, Some(&nerf_w)))
}

fn gradient_suite() -> Outcome {
    let t0 = Instant::now();
    let tol = Tolerance::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut s = Suite { checked: 0, failures: Vec::new() };

    let x = random_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let w = random_tensor(&mut rng, &[4, 2], -1.0, 1.0);
    let b = random_tensor(&mut rng, &[2], -1.0, 1.0);
    let pos = random_tensor(&mut rng, &[3, 4], 0.2, 2.0);
    let y = random_tensor(&mut rng, &[3, 4], -1.0, 1.0);

    s.record("linear", check_inputs(&[x.clone(), w.clone(), b.clone()], tol, |g, v| {
        let o = g.linear(v[0], v[1], Some(v[2]))?;
        project(g, o, 1)
    }));
    type Unary = fn(&mut Graph<'_, f64>, Var) -> Var;
    let unaries: [(&str, Unary, &Tensor<f64>); 6] = [
        ("relu", |g, v| g.relu(v), &x),
        ("sigmoid", |g, v| g.sigmoid(v), &x),
        ("exp", |g, v| g.exp(v), &x),
        ("log", |g, v| g.log(v), &pos),
        ("clamp", |g, v| g.clamp(v, -0.5, 0.5), &x),
        ("affine", |g, v| g.affine(v, -1.5, 0.25), &x),
    ];
    for (name, f, input) in unaries {
        s.record(name, check_inputs(&[input.clone()], tol, |g, v| {
            let o = f(g, v[0]);
            project(g, o, 2)
        }));
    }
    let col = random_tensor(&mut rng, &[3, 1], -1.0, 1.0);
    s.record("add/sub/mul", check_inputs(&[x.clone(), y.clone(), col], tol, |g, v| {
        let a = g.add(v[0], v[1])?;
        let d = g.sub(a, v[0])?;
        let m = g.mul(d, v[1])?;
        let bc = g.mul(m, v[2])?;
        project(g, bc, 3)
    }));
    s.record("sum/mean/mse", check_inputs(&[x.clone(), y.clone()], tol, |g, v| {
        let a = g.sum(v[0]);
        let m = g.mean(v[1]);
        let e = g.mse(v[0], v[1])?;
        let t = g.add(a, m)?;
        g.add(t, e)
    }));
    s.record("concat/slice/gather", check_inputs(&[x.clone(), y.clone()], tol, |g, v| {
        let c = g.concat(&[v[0], v[1]])?;
        let sl = g.slice_cols(c, 2, 5)?;
        let gt = g.gather_rows(sl, vec![2, 0, 0, 1])?;
        project(g, gt, 4)
    }));

    let hcfg = HashEncodingConfig {
        table_size: 64,
        grid_resolution: 8,
        ..Default::default()
    };
    let table = random_tensor(&mut rng, &hcfg.table_shape(), -0.5, 0.5);
    let pts: Vec<[f64; 3]> = (0..6).map(|_| [0, 1, 2].map(|_| rng.random_range(-1.9..1.9))).collect();
    s.record("hash_encode", check_inputs(&[table], tol, |g, v| {
        let e = hash_encode(g, &hcfg, v[0], &pts)?;
        project(g, e, 5)
    }));

    let colors = random_tensor(&mut rng, &[5, 3], 0.05, 0.95);
    for l in 1..=ShLevel::MAX {
        let level = ShLevel::new(l).map_err(err)?;
        s.record(&format!("sh_color_encode l{l}"), check_inputs(&[colors.clone()], tol, |g, v| {
            let e = sh_color_encode_graph(g, v[0], level, RangeMode::Strict)?;
            project(g, e, 6)
        }));
    }

    let per_ray = 5;
    let sig = random_tensor(&mut rng, &[3 * per_ray, 1], 0.0, 3.0);
    let deltas: Vec<f64> = (0..3 * per_ray).map(|_| rng.random_range(0.05..0.5)).collect();
    let cols = random_tensor(&mut rng, &[3 * per_ray, 3], 0.0, 1.0);
    s.record("volume_weights/segment_sum/composite", check_inputs(&[sig, cols], tol, |g, v| {
        let w = volume_weights(g, v[0], deltas.clone(), per_ray)?;
        let acc = segment_sum(g, w, per_ray)?;
        let c = composite_graph(g, w, acc, v[1], per_ray, [0.9, 0.8, 0.7])?;
        project(g, c, 7)
    }));

    let yv = random_tensor(&mut rng, &[4, 1], 0.0, 1.0);
    let xv = random_tensor(&mut rng, &[4, 1], 0.0, 1.0);
    let cm = random_tensor(&mut rng, &[4, 3], 0.0, 1.0);
    let cc = random_tensor(&mut rng, &[4, 3], 0.0, 1.0);
    s.record("joint_color", check_inputs(&[yv.clone(), cm.clone(), cc.clone()], tol, |g, v| {
        let f = joint_color(g, v[0], v[1], v[2])?;
        project(g, f, 8)
    }));
    s.record("joint_color_test1", check_inputs(&[xv, yv, cm, cc], tol, |g, v| {
        let f = joint_color_test1(g, v[0], v[1], v[2], v[3])?;
        project(g, f, 9)
    }));

    let prop_edges = vec![
        RaySamples::new(vec![0.5, 1.0, 2.0, 6.0]).map_err(err)?,
        RaySamples::new(vec![0.5, 3.0, 4.0, 6.0]).map_err(err)?,
    ];
    let nerf_edges = vec![
        RaySamples::new(vec![0.5, 0.8, 1.7, 2.5, 6.0]).map_err(err)?,
        RaySamples::new(vec![0.5, 2.0, 2.9, 3.1, 6.0]).map_err(err)?,
    ];
    let nerf_w = vec![0.3, 0.4, 0.2, 0.05, 0.1, 0.5, 0.3, 0.05];
    let prop_w = Tensor::new(&[6, 1], vec![0.1, 0.2, 0.3, 0.1, 0.4, 0.2]).unwrap();
    s.record("interlevel", check_inputs(&[prop_w], tol, |g, v| interlevel_graph(g, v[0], &prop_edges, &nerf_edges, &nerf_w)));

    // the field itself, wrt a handful of parameters in every tensor
    for variant in Variant::ALL {
        let field = small_field(variant);
        let p = field.init_params::<f64>(3);
        let rays = batch_rays();
        let pts: Vec<[f64; 3]> = rays.iter().flat_map(|r| [1.5, 2.5, 3.5].map(|t| r.at(t))).collect();
        let dirs: Vec<[f64; 3]> = rays.iter().map(|r| r.direction).collect();
        let app = Appearance::PerRay(vec![0, 1, 0, 1]);
        let batch = PointBatch { points: &pts, dirs: &dirs, per_ray: 3, appearance: &app };
        let sel: Vec<(String, usize)> = p
            .iter()
            .filter(|(_, e)| !e.frozen)
            .flat_map(|(n, e)| {
                let len = e.tensor.len();
                [0, len / 3, len - 1].map(|i| (n.to_string(), i))
            })
            .collect();
        s.record(&format!("field {variant}"), check_params(&p, &sel, tol, |g, ps| {
            let out = field.forward(g, ps, &batch)?;
            let mut parts = vec![out.sigma, out.c_fine];
            parts.extend(out.c_mid);
            parts.extend(out.c_coarse);
            let mut total = project(g, parts[0], 10)?;
            for (k, &part) in parts.iter().enumerate().skip(1) {
                let t = project(g, part, 10 + k as u64)?;
                total = g.add(total, t)?;
            }
            Ok(total)
        }));
        s.record(&format!("proposal density {variant}"), check_params(
            &p,
            &[("prop0.l0.w".to_string(), 5), ("prop1.l1.b".to_string(), 0)],
            tol,
            |g, ps| {
                let d = field.proposal_density(g, ps, 0, &pts)?;
                let e = field.proposal_density(g, ps, 1, &pts)?;
                let a = project(g, d, 20)?;
                let b = project(g, e, 21)?;
                g.add(a, b)
            },
        ));
        s.record(&format!("full loss, 4-ray batch, {variant}"), full_loss_check(variant));
    }

    let secs = t0.elapsed().as_secs_f64();
    if s.failures.is_empty() && secs < 300.0 {
        Ok(format!("{} derivatives checked (rel 1e-3, abs 1e-6), {secs:.1}s", s.checked))
    } else {
        Err(format!("{secs:.1}s, failures: {}", s.failures.join("; ")))
    }
}

// ---------------------------------------------------------------- contraction

fn contraction_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let x = [0, 1, 2].map(|_| rng.random_range(-1.0..=1.0));
        if contract(x).map_err(err)? != x {
            return Err(format!("not identity at {x:?}"));
        }
    }
    let mut max_norm = 0.0f64;
    for _ in 0..100_000 {
        let mag = 10f64.powf(rng.random_range(-3.0..6.0));
        let d = normalize([0, 1, 2].map(|_| rng.random_range(-1.0..1.0)));
        let y = contract(d.map(|v| v * mag)).map_err(err)?;
        max_norm = max_norm.max(y.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    let mut jump = 0.0f64;
    for _ in 0..10_000 {
        let mut x = [0, 1, 2].map(|_| rng.random_range(-1.0..1.0));
        let a = rng.random_range(0..3);
        x[a] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        for eps in [1e-7, 1e-9] {
            for f in [1.0 - eps, 1.0 + eps] {
                let y = contract(x.map(|v| v * f)).map_err(err)?;
                jump = jump.max((0..3).map(|k| (y[k] - x[k]).abs()).fold(0.0, f64::max));
            }
        }
    }
    ensure(
        max_norm < 2.0 && jump <= 1e-6,
        format!("identity inside; max |out|inf {max_norm:.9} over 1e5 points up to 1e6; boundary gap {jump:.1e}"),
    )
}

// ---------------------------------------------------------------- SH

fn sh_suite() -> Outcome {
    let level = ShLevel::new(4).map_err(err)?;
    let k = level.components();
    let n = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut gram = vec![0.0f64; k * k];
    for _ in 0..n {
        let z: f64 = rng.random_range(-1.0..1.0);
        let phi = rng.random_range(0.0..2.0 * PI);
        let r = (1.0 - z * z).sqrt();
        let y = sh_basis([r * phi.cos(), r * phi.sin(), z], level).map_err(err)?;
        for i in 0..k {
            for j in i..k {
                gram[i * k + j] += y[i] * y[j];
            }
        }
    }
    let mut ortho = 0.0f64;
    for i in 0..k {
        for j in i..k {
            let v = 4.0 * PI * gram[i * k + j] / n as f64;
            let want = if i == j { 1.0 } else { 0.0 };
            ortho = ortho.max((v - want).abs());
        }
    }

    // degree 0..1 encoding decodes through the standard linear constants
    let c1 = (3.0 / (4.0 * PI)).sqrt();
    let mut decode = 0.0f64;
    for _ in 0..1000 {
        let c = [0, 1, 2].map(|_| rng.random_range(0.0..=1.0));
        let e = sh_color_encode(c, ShLevel::new(2).map_err(err)?, RangeMode::Strict).map_err(err)?;
        let back = [(e[3] / c1 + 1.0) / 2.0, (e[1] / c1 + 1.0) / 2.0, (e[2] / c1 + 1.0) / 2.0];
        decode = decode.max((0..3).map(|a| (back[a] - c[a]).abs()).fold(0.0, f64::max));
    }

    let mut endpoints = true;
    for _ in 0..1000 {
        let m = [0, 1, 2].map(|_| rng.random_range(0.0..=1.0));
        let c = [0, 1, 2].map(|_| rng.random_range(0.0..=1.0));
        endpoints &= joint_color_values(1.0, m, c) == m && joint_color_values(0.0, m, c) == c;
    }
    ensure(
        ortho <= 0.01 && decode <= 1e-6 && endpoints,
        format!(
            "orthonormality err {ortho:.4} (tol 0.01, l<=4, 1e6 samples); decode err {decode:.1e}; endpoints exact: {endpoints}"
        ),
    )
}

// ---------------------------------------------------------------- interlevel

fn interlevel() -> Outcome {
    let h = |e: &[f64], w: &[f64]| WeightHistogram::new(e.to_vec(), w.to_vec()).unwrap();
    let mut bounded = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        // proposal bins each hold at least the NeRF mass they overlap
        let mut nerf_e: Vec<f64> = (0..12).map(|_| rng.random_range(0.5..6.0)).collect();
        nerf_e.extend([0.5, 6.0]);
        nerf_e.sort_by(f64::total_cmp);
        nerf_e.dedup();
        let nw: Vec<f64> = (1..nerf_e.len()).map(|_| rng.random_range(0.0..0.07)).collect();
        let prop_e: Vec<f64> = nerf_e.iter().copied().step_by(3).chain([6.0]).collect::<Vec<_>>();
        let mut prop_e = prop_e;
        prop_e.dedup();
        let pw: Vec<f64> = prop_e
            .windows(2)
            .map(|b| {
                nerf_e
                    .windows(2)
                    .zip(&nw)
                    .filter(|(e, _)| e[1].min(b[1]) - e[0].max(b[0]) > 0.0)
                    .map(|(_, w)| w)
                    .sum::<f64>()
                    + rng.random_range(0.0..0.01)
            })
            .collect();
        bounded = bounded.max(loss_interlevel(&h(&nerf_e, &nw), &h(&prop_e, &pw)).map_err(err)?);
    }
    let single = loss_interlevel(&h(&[0.0, 1.0], &[1.0]), &h(&[0.0, 1.0], &[0.5])).map_err(err)?;
    let want = 0.25 / (0.5 + 1e-7);
    ensure(
        bounded == 0.0 && (single - want).abs() <= 1e-6,
        format!("bounded cases max loss {bounded:e}; single bin {single:.9} vs {want:.9}"),
    )
}

// ---------------------------------------------------------------- training runs

fn default_dataset(scene: &str, res: u32) -> enerf::Result<enerf::scenegen::SceneDataset> {
    let s = enerf::cli::SceneConfig::default();
    let opts = GenOptions {
        fov_deg: s.fov_deg,
        near: s.near,
        far: s.far,
        n_quadrature: s.n_quadrature,
        radius: s.radius,
    };
    generate_dataset(&OracleScene::named(scene)?, s.train_views, s.eval_views, (res, res), CameraRig::Orbit, s.seed, &opts)
}

fn end_to_end() -> Outcome {
    let t0 = Instant::now();
    let ds = default_dataset("default", 64).map_err(err)?;
    let cfg = RunConfig::default();
    let iters = cfg.train.iterations;
    let chunk = cfg.train.render_chunk;
    let mut tr = Trainer::new(&ds, cfg).map_err(err)?;
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..iters {
        let row = tr.step(&ds).map_err(err)?;
        first.get_or_insert(row.loss.total);
        last = row.loss.total;
    }
    let rep = evaluate(&tr.model, &ds, chunk).map_err(err)?;
    let mins = t0.elapsed().as_secs_f64() / 60.0;
    let threads = rayon::current_num_threads();
    ensure(
        rep.mean_fine.psnr >= 25.0,
        format!(
            "held-out PSNR {:.2} dB, SSIM {:.3} after {iters} iterations (target 25 dB); loss {:.3} -> {:.4}; {mins:.1} min on {threads} thread(s)",
            rep.mean_fine.psnr,
            rep.mean_fine.ssim,
            first.unwrap_or(f64::NAN),
            last
        ),
    )
}

// Ablation runs use a reduced budget so the whole matrix stays within an hour
// on one core; the variants share everything except the variant switch.
const ABLATION_RES: u32 = 32;
const ABLATION_CONFIG: &str = "[train]\niterations = 800\nrays_per_batch = 256\ncheckpoint_every = 0\n\n[io]\nlog_every = 50\nwrite_renders = false\n";

struct Table {
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, String> {
        let mut rd = csv::Reader::from_path(path).map_err(err)?;
        let header: Vec<String> = rd.headers().map_err(err)?.iter().map(String::from).collect();
        let want = ["variant", "seed", "psnr_fine", "ssim_fine", "psnr_mid", "ssim_mid", "psnr_coarse", "ssim_coarse"];
        if header != want {
            return Err(format!("unexpected columns {header:?}"));
        }
        Ok(Self {
            rows: rd.records().collect::<Result<_, _>>().map_err(err)?,
        })
    }

    fn fine_psnr(&self, variant: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| &r[0] == variant && &r[1] != "median")
            .filter_map(|r| r[2].parse().ok())
            .collect()
    }

    fn complete(&self, variant: &str) -> bool {
        self.rows
            .iter()
            .filter(|r| &r[0] == variant && &r[1] != "median")
            .all(|r| (2..8).all(|c| !r[c].is_empty()))
    }
}

struct AblationData {
    dir: tempfile::TempDir,
    elapsed: Duration,
}

fn ablate(data: &Path, out: &Path, variants: &str, seeds: &str) -> Result<Table, String> {
    let cfg = out.with_extension("toml");
    fs::write(&cfg, ABLATION_CONFIG).map_err(err)?;
    let code = enerf::cli::run([
        "enerf", "ablate", "--data", data.to_str().unwrap(), "--variants", variants, "--seeds", seeds, "--out",
        out.to_str().unwrap(), "--config", cfg.to_str().unwrap(),
    ]);
    if code != 0 {
        return Err(format!("ablate {variants} exited {code}"));
    }
    Table::read(&out.join("ablation.csv"))
}

fn specular_data() -> Result<AblationData, String> {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().map_err(err)?;
    let res = format!("{ABLATION_RES}x{ABLATION_RES}");
    let code = enerf::cli::run(["enerf", "gen", "--scene", "specular", "--res", &res, "--out", dir.path().join("data").to_str().unwrap()]);
    if code != 0 {
        return Err(format!("gen exited {code}"));
    }
    Ok(AblationData { dir, elapsed: t0.elapsed() })
}

fn median(v: &[f64]) -> f64 {
    enerf::cli::median(v).unwrap_or(f64::NAN)
}

fn std_dev(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

fn ablation_trend(d: &AblationData) -> Outcome {
    let t0 = Instant::now();
    let data = d.dir.path().join("data");
    let a = ablate(&data, &d.dir.path().join("trend_a"), "enhance,no_pretrained", "0,1,2,3,4")?;
    let b = ablate(&data, &d.dir.path().join("trend_b"), "no_multiperf", "0,1,2")?;
    let enh = a.fine_psnr("enhance");
    let nop = a.fine_psnr("no_pretrained");
    let nmp = b.fine_psnr("no_multiperf");
    if enh.len() != 5 || nop.len() != 5 || nmp.len() != 3 {
        return Err(format!("missing runs: {} enhance, {} no_pretrained, {} no_multiperf", enh.len(), nop.len(), nmp.len()));
    }
    let (m_enh, m_nmp) = (median(&enh[..3]), median(&nmp));
    let (s_enh, s_nop) = (std_dev(&enh), std_dev(&nop));
    let mins = (t0.elapsed() + d.elapsed).as_secs_f64() / 60.0;
    let detail = format!(
        "median fine PSNR over 3 seeds: enhance {m_enh:.2}, no_multiperf {m_nmp:.2} (need gap >= 1 dB, got {:+.2}); \
         5-seed std: no_pretrained {s_nop:.3} vs enhance {s_enh:.3}; {mins:.1} min",
        m_enh - m_nmp
    );
    ensure(m_enh >= m_nmp + 1.0 && s_nop >= s_enh, detail)
}

fn three_channel(d: &AblationData) -> Outcome {
    let data = d.dir.path().join("data");
    let t = ablate(&data, &d.dir.path().join("channels"), "enhance,test1,test2", "0")?;
    let complete = ["enhance", "test1", "test2"].iter().all(|v| t.complete(v));
    let (e, t2) = (t.fine_psnr("enhance"), t.fine_psnr("test2"));
    let (e, t2) = (e.first().copied().unwrap_or(f64::NAN), t2.first().copied().unwrap_or(f64::NAN));
    let t1 = t.fine_psnr("test1").first().copied().unwrap_or(f64::NAN);
    ensure(
        complete && e >= t2,
        format!("all six metric columns filled: {complete}; fine PSNR enhance {e:.2}, test1 {t1:.2}, test2 {t2:.2}"),
    )
}

fn determinism_and_resume() -> Outcome {
    let opts = GenOptions {
        n_quadrature: 512,
        ..GenOptions::default()
    };
    let ds = generate_dataset(&OracleScene::named("default").map_err(err)?, 6, 1, (16, 16), CameraRig::Orbit, 3, &opts)
        .map_err(err)?;
    let mut cfg = RunConfig::default();
    cfg.field.hash.table_size = 1 << 14;
    cfg.train.rays_per_batch = 128;
    cfg.train.pretrain_steps = 50;
    let run = |n: usize| -> enerf::Result<(Trainer, f64)> {
        let mut t = Trainer::new(&ds, cfg.clone())?;
        let mut last = f64::NAN;
        for _ in 0..n {
            last = t.step(&ds)?.loss.total;
        }
        Ok((t, last))
    };
    let (_, a) = run(40).map_err(err)?;
    let (_, b) = run(40).map_err(err)?;

    let dir = tempfile::tempdir().map_err(err)?;
    let ckpt = dir.path().join("half.ckpt");
    let (half, _) = run(20).map_err(err)?;
    half.save_checkpoint(&ckpt).map_err(err)?;
    drop(half);
    let mut resumed = Trainer::resume(&ds, cfg.clone(), &ckpt).map_err(err)?;
    let mut c = f64::NAN;
    for _ in 0..20 {
        c = resumed.step(&ds).map_err(err)?.loss.total;
    }
    let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(1.0);
    ensure(
        rel(a, b) <= 1e-5 && rel(a, c) <= 1e-5,
        format!("final loss {a:.8} / rerun {b:.8} / resumed at 20 of 40 {c:.8} (tol 1e-5)"),
    )
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut results: Vec<(String, Outcome, Duration)> = Vec::new();
    let mut run = |name: &str, f: &dyn Fn() -> Outcome| {
        if !wanted(name) {
            return;
        }
        let t0 = Instant::now();
        let r = f();
        let dt = t0.elapsed();
        let (tag, detail) = match &r {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} {name} ({:.1}s): {detail}", dt.as_secs_f64());
        results.push((name.to_string(), r, dt));
    };

    run("oracle-equivalence", &oracle_equivalence);
    run("analytic-slab", &analytic_slab);
    run("gradient-suite", &gradient_suite);
    run("contraction", &contraction_suite);
    run("sh-suite", &sh_suite);
    run("interlevel-loss", &interlevel);
    run("determinism-resume", &determinism_and_resume);
    run("end-to-end-fit", &end_to_end);
    if wanted("ablation-trend") || wanted("three-channel-eval") {
        match specular_data() {
            Ok(d) => {
                run("ablation-trend", &|| ablation_trend(&d));
                run("three-channel-eval", &|| three_channel(&d));
            }
            Err(e) => {
                for name in ["ablation-trend", "three-channel-eval"] {
                    run(name, &|| Err(format!("dataset generation failed: {e}")));
                }
            }
        }
    }

    let failed = results.iter().filter(|r| r.1.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 && std::env::var("ENERF_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
