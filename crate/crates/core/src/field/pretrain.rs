use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Adam, AdamConfig, Graph, ParamStore, Tensor};
use crate::encoders::{sh_basis, ShLevel};
use crate::error::{Error, Result};
use crate::field::{init_params_by_spec, mlp_forward, Field, FieldConfig, ParamSpec, Variant};
use crate::geometry::contract_unchecked;
use crate::scenegen::{SceneDataset, Split};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
}

const BATCH: usize = 256;
const LR: f64 = 1e-3;

/// Position- and direction-encoding samples drawn from the calibration
/// scene's train rays. Hash-feature slots are filled with uniform noise
/// since the table they would come from is not trained yet.
fn draw_batch(ds: &SceneDataset, train: &[usize], feat: usize, level: ShLevel, rng: &mut ChaCha8Rng) -> Result<(Vec<f32>, Vec<f32>)> {
    let mut pos = Vec::with_capacity(BATCH * (feat + 4));
    let mut dir = Vec::with_capacity(BATCH * level.components());
    for _ in 0..BATCH {
        let f = train[rng.random_range(0..train.len())];
        let ray = ds.ray(f, rng.random_range(0..ds.width), rng.random_range(0..ds.height))?;
        let t = rng.random_range(ray.t_near..ray.t_far);
        let x = contract_unchecked(ray.at(t));
        pos.extend((0..feat).map(|_| rng.random_range(-1.0f32..1.0)));
        pos.extend(x.iter().map(|&v| v as f32));
        pos.push(1.0);
        dir.extend(sh_basis(ray.direction, level)?.into_iter().map(|v| v as f32));
    }
    Ok((pos, dir))
}

fn recon_loss<'p>(
    g: &mut Graph<'p, f32>,
    params: &'p ParamStore<f32>,
    layers: usize,
    pos: &Tensor<f32>,
    dir: &Tensor<f32>,
) -> Result<crate::diffcore::Var> {
    let mut total = None;
    for (part, x) in [("coarse", pos), ("fine", dir)] {
        let xin = g.input(x);
        let code = mlp_forward(g, params, &format!("decoder.{part}"), layers, xin)?;
        let rec = mlp_forward(g, params, &format!("recon.{part}"), 1, code)?;
        let l = g.mse(rec, xin)?;
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    Ok(total.unwrap())
}

/// Trains the two decoders as auto-encoders (encoding -> 32 features ->
/// linear reconstruction) on `calib` for `steps` Adam steps. The
/// reconstruction heads are discarded; the returned store holds only the
/// frozen `decoder.*` tensors. `steps == 0` returns the seeded initialisation.
pub fn pretrain_decoders(
    calib: &SceneDataset,
    config: &FieldConfig,
    steps: usize,
    seed: u64,
) -> Result<(ParamStore<f32>, PretrainReport)> {
    let train = calib.indices(Split::Train);
    if train.is_empty() {
        return Err(Error::EmptyScene("calibration dataset has no train frames".into()));
    }
    let cfg = FieldConfig {
        variant: Variant::Enhance,
        ..config.clone()
    };
    let field = Field::new(cfg.clone(), 1)?;
    let mut specs: Vec<ParamSpec> = field
        .param_specs()
        .into_iter()
        .filter(|s| s.name.starts_with("decoder."))
        .map(|s| ParamSpec { frozen: false, ..s })
        .collect();
    let level = ShLevel::new(cfg.direction_level)?;
    let h = cfg.decoder_hidden;
    specs.extend(ParamSpec::mlp("recon.coarse", &[h, cfg.hash.output_dim()], false));
    specs.extend(ParamSpec::mlp("recon.fine", &[h, level.components()], false));
    let mut params: ParamStore<f32> = init_params_by_spec(&specs, seed);

    let feat = cfg.hash.features_per_entry;
    let mut probe_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (pp, pd) = draw_batch(calib, &train, feat, level, &mut probe_rng)?;
    let probe = (
        Tensor::new(&[BATCH, feat + 4], pp)?,
        Tensor::new(&[BATCH, level.components()], pd)?,
    );
    let eval = |params: &ParamStore<f32>| -> Result<f64> {
        let mut g = Graph::new();
        let l = recon_loss(&mut g, params, cfg.decoder_layers, &probe.0, &probe.1)?;
        Ok(g.value(l)[0] as f64)
    };
    let initial_loss = eval(&params)?;

    let mut adam = Adam::new(AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..steps {
        let (p, d) = draw_batch(calib, &train, feat, level, &mut rng)?;
        let pos = Tensor::new(&[BATCH, feat + 4], p)?;
        let dir = Tensor::new(&[BATCH, level.components()], d)?;
        let grads = {
            let mut g = Graph::new();
            let l = recon_loss(&mut g, &params, cfg.decoder_layers, &pos, &dir)?;
            g.backward(l)?;
            g.param_grads()
        };
        params.zero_grads();
        params.accumulate_grads(grads)?;
        adam.step_uniform(&mut params, LR)?;
    }
    let final_loss = eval(&params)?;

    let mut out = params.subset("decoder.");
    out.set_frozen("decoder.", true);
    out.zero_grads();
    Ok((out, PretrainReport { initial_loss, final_loss }))
}
