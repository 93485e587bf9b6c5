//! Optimisation loop, checkpoints, and held-out evaluation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{checkpoint, Adam, AdamConfig, Graph, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::field::{pretrain_decoders, Appearance, Field, FieldConfig, Variant};
use crate::geometry::SamplerConfig;
use crate::objective::{loss_graph, psnr, ssim, LossBreakdown, LossConfig};
use crate::renderer::{render_batch, render_view, Channel, PlanSource, RenderContext, Rgb, View, ViewImages};
use crate::scenegen::{generate_dataset, CameraRig, GenOptions, OracleScene, SceneDataset, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub rays_per_batch: usize,
    /// Rate for hash tables and appearance embeddings.
    pub lr_table: f64,
    /// Rate for every MLP weight and bias.
    pub lr_mlp: f64,
    /// Steps over which rates ramp linearly from a tenth to their full value.
    pub warmup_steps: usize,
    pub seed: u64,
    /// Evaluate on held-out views every this many steps (0 disables).
    pub eval_every: usize,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint_every: usize,
    /// Autoencoder steps used to pretrain the frozen decoders.
    pub pretrain_steps: usize,
    /// Rays per inference chunk.
    pub render_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            rays_per_batch: 1024,
            lr_table: 1e-2,
            lr_mlp: 1e-3,
            warmup_steps: 100,
            seed: 0,
            eval_every: 0,
            checkpoint_every: 500,
            pretrain_steps: 500,
            render_chunk: 4096,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rays_per_batch == 0 || self.render_chunk == 0 {
            return Err(Error::Config("rays_per_batch and render_chunk must be positive".into()));
        }
        if !(self.lr_table >= 0.0 && self.lr_mlp >= 0.0) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        Ok(())
    }

    fn lr_scale(&self, step: u64) -> f64 {
        let w = self.warmup_steps as f64;
        if (step as f64) < w {
            0.1 + 0.9 * step as f64 / w
        } else {
            1.0
        }
    }
}

/// Everything that defines a model and how it is trained.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub field: FieldConfig,
    pub sampling: SamplerConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        self.sampling.validate()?;
        self.train.validate()?;
        if self.sampling.resample_counts.len() != self.field.proposal_rounds {
            return Err(Error::Config(format!(
                "sampling.resample_counts has {} entries but field.proposal_rounds is {}",
                self.sampling.resample_counts.len(),
                self.field.proposal_rounds
            )));
        }
        Ok(())
    }

    fn effective_loss(&self) -> LossConfig {
        LossConfig {
            sh_terms: self.loss.sh_terms && self.field.variant.has_split_colors(),
            ..self.loss.clone()
        }
    }
}

/// A field with its parameters and rendering settings.
#[derive(Debug, Clone)]
pub struct Model {
    pub field: Field,
    pub params: ParamStore<f32>,
    pub sampling: SamplerConfig,
    pub background: Rgb,
    /// Appearance rows seen in training; their mean is used for novel views.
    pub train_appearances: Vec<usize>,
}

impl Model {
    pub fn variant(&self) -> Variant {
        self.field.variant()
    }

    pub fn context(&self) -> RenderContext<'_> {
        RenderContext {
            field: &self.field,
            sampler: &self.sampling,
            background: self.background,
        }
    }

    pub fn eval_appearance(&self) -> Result<Vec<f64>> {
        self.field.mean_appearance(&self.params, &self.train_appearances)
    }

    pub fn render(&self, view: &View, chunk: usize) -> Result<ViewImages> {
        render_view(&self.context(), &self.params, view, &self.eval_appearance()?, chunk)
    }
}

/// Small dataset whose rays feed decoder pretraining.
pub fn calibration_dataset() -> Result<SceneDataset> {
    let opts = GenOptions {
        n_quadrature: 256,
        ..Default::default()
    };
    generate_dataset(&OracleScene::named("calibration")?, 8, 1, (24, 24), CameraRig::Orbit, 0, &opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub loss: LossBreakdown,
    pub psnr_train: f64,
}

pub struct Trainer {
    pub config: RunConfig,
    pub model: Model,
    adam: Adam<f32>,
    step: u64,
}

fn view_of(ds: &SceneDataset, frame: usize) -> View {
    View {
        intrinsics: ds.intrinsics,
        pose: ds.frames[frame].pose,
        width: ds.width,
        height: ds.height,
        near: ds.near,
        far: ds.far,
    }
}

impl Trainer {
    /// Fresh model: seeded initialisation plus pretrained, frozen decoders.
    pub fn new(ds: &SceneDataset, config: RunConfig) -> Result<Self> {
        config.validate()?;
        ds.validate()?;
        if ds.indices(Split::Train).is_empty() {
            return Err(Error::EmptyScene("dataset has no train frames".into()));
        }
        let field = Field::new(config.field.clone(), ds.num_appearance())?;
        let mut params = field.init_params::<f32>(config.train.seed);
        if field.variant().has_decoders() {
            let calib = calibration_dataset()?;
            let (dec, report) = pretrain_decoders(&calib, &config.field, config.train.pretrain_steps, config.train.seed)?;
            log::info!(
                "decoder pretraining: loss {:.5} -> {:.5}",
                report.initial_loss,
                report.final_loss
            );
            params.copy_values_from(&dec)?;
        }
        let model = Model {
            field,
            params,
            sampling: config.sampling.clone(),
            background: ds.background,
            train_appearances: ds.train_appearances(),
        };
        Ok(Self {
            config,
            model,
            adam: Adam::new(AdamConfig::default()),
            step: 0,
        })
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    /// One optimisation step on a seeded batch of train pixels.
    pub fn step(&mut self, ds: &SceneDataset) -> Result<StepLog> {
        let tc = &self.config.train;
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        rng.set_stream(self.step);
        let train = ds.indices(Split::Train);
        let mut picks = Vec::with_capacity(tc.rays_per_batch);
        let mut rays = Vec::with_capacity(tc.rays_per_batch);
        let mut gt = Vec::with_capacity(tc.rays_per_batch);
        for _ in 0..tc.rays_per_batch {
            let f = train[rng.random_range(0..train.len())];
            let u = rng.random_range(0..ds.width);
            let v = rng.random_range(0..ds.height);
            rays.push(ds.ray(f, u, v)?);
            gt.push(ds.pixel(f, u, v));
            picks.push((f, u, v));
        }
        let app = Appearance::PerRay(picks.iter().map(|&(f, ..)| ds.frames[f].appearance_index).collect());
        let plan_seed: u64 = rng.random();
        let loss_cfg = self.config.effective_loss();

        let (loss, grads) = {
            let ctx = self.model.context();
            let mut g = Graph::new();
            let nan = |loss: &LossBreakdown| Error::NanLoss {
                step: self.step as usize,
                detail: nan_dump(loss, &picks, &gt),
            };
            let source = PlanSource::Sample {
                seed: plan_seed,
                jitter: true,
            };
            let b = match render_batch(&mut g, &ctx, &self.model.params, &rays, &app, source) {
                Err(Error::NonFinite(what)) => {
                    log::error!("non-finite value in forward pass: {what}");
                    let blank = LossBreakdown {
                        total: f64::NAN,
                        ..Default::default()
                    };
                    return Err(nan(&blank));
                }
                r => r?,
            };
            let vars = loss_graph(&mut g, &b, &gt, &loss_cfg)?;
            let loss = vars.breakdown(&g);
            if !loss.total.is_finite() {
                return Err(nan(&loss));
            }
            g.backward(vars.total)?;
            (loss, g.param_grads())
        };
        let params = &mut self.model.params;
        params.zero_grads();
        params.accumulate_grads(grads)?;
        let scale = tc.lr_scale(self.step);
        let (lr_table, lr_mlp) = (tc.lr_table * scale, tc.lr_mlp * scale);
        self.adam
            .step(params, |name| if Field::is_table(name) { lr_table } else { lr_mlp })?;
        params.zero_grads();
        let log = StepLog {
            step: self.step,
            loss,
            psnr_train: -10.0 * (loss.fine_mse / 3.0).max(1e-12).log10(),
        };
        self.step += 1;
        Ok(log)
    }

    /// Parameters, optimizer moments, step count, variant, and the run config
    /// in one checkpoint.
    pub fn checkpoint_store(&self) -> Result<ParamStore<f32>> {
        let mut store = self.model.params.clone();
        for (name, t) in self.adam.export() {
            store.insert(name, t, false)?;
        }
        store.insert(
            "meta.step",
            Tensor::new(&[2], vec![(self.step >> 16) as f32, (self.step & 0xffff) as f32])?,
            false,
        )?;
        store.insert(format!("meta.variant.{}", self.model.variant()), Tensor::scalar(1.0), false)?;
        let cfg = serde_json::to_vec(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
        store.insert("meta.config", Tensor::new(&[cfg.len()], cfg.into_iter().map(f32::from).collect())?, false)?;
        store.insert(
            "meta.num_appearance",
            Tensor::scalar(self.model.field.num_appearance as f32),
            false,
        )?;
        store.insert(
            "meta.train_appearances",
            Tensor::new(
                &[self.model.train_appearances.len()],
                self.model.train_appearances.iter().map(|&a| a as f32).collect(),
            )?,
            false,
        )?;
        store.insert("meta.background", Tensor::new(&[3], self.model.background.map(|c| c as f32).to_vec())?, false)?;
        Ok(store)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        checkpoint::save(&self.checkpoint_store()?, path)
    }

    /// Continues a run from `path`. The checkpoint must come from the same variant.
    pub fn resume(ds: &SceneDataset, config: RunConfig, path: &Path) -> Result<Self> {
        config.validate()?;
        let store = checkpoint::load::<f32>(path)?;
        let found = variant_of(&store)?;
        if found != config.field.variant {
            return Err(Error::VariantMismatch {
                expected: config.field.variant.name().into(),
                found: found.name().into(),
            });
        }
        let field = Field::new(config.field.clone(), ds.num_appearance())?;
        let mut params = field.init_params::<f32>(config.train.seed);
        copy_checked(&mut params, &store)?;
        let adam = Adam::import(AdamConfig::default(), &store)?;
        let step = read_split_u64(&store, "meta.step")?;
        let model = Model {
            field,
            params,
            sampling: config.sampling.clone(),
            background: ds.background,
            train_appearances: ds.train_appearances(),
        };
        Ok(Self {
            config,
            model,
            adam,
            step,
        })
    }
}

fn nan_dump(loss: &LossBreakdown, picks: &[(usize, u32, u32)], gt: &[Rgb]) -> String {
    let mut s = format!("loss components {loss:?}; batch of {} rays (frame, u, v, gt):", picks.len());
    for (p, c) in picks.iter().zip(gt) {
        s.push_str(&format!("\n  {} {} {} {:.4} {:.4} {:.4}", p.0, p.1, p.2, c[0], c[1], c[2]));
    }
    s
}

fn read_split_u64(store: &ParamStore<f32>, name: &str) -> Result<u64> {
    let v = store
        .get(name)
        .map_err(|_| Error::Checkpoint(format!("checkpoint lacks `{name}`")))?
        .tensor
        .values();
    if v.len() != 2 {
        return Err(Error::Checkpoint(format!("`{name}` must hold two values")));
    }
    Ok(((v[0] as u64) << 16) | v[1] as u64)
}

fn variant_of(store: &ParamStore<f32>) -> Result<Variant> {
    let names: Vec<String> = store
        .names()
        .into_iter()
        .filter_map(|n| n.strip_prefix("meta.variant.").map(str::to_string))
        .collect();
    match names.as_slice() {
        [one] => one.parse(),
        _ => Err(Error::Checkpoint("checkpoint does not record exactly one variant".into())),
    }
}

fn copy_checked(params: &mut ParamStore<f32>, store: &ParamStore<f32>) -> Result<()> {
    for name in params.names() {
        if !store.contains(&name) {
            return Err(Error::Checkpoint(format!("checkpoint lacks `{name}`")));
        }
    }
    let relevant = ParamStore::from_entries(
        store
            .iter()
            .filter(|(n, _)| params.contains(n))
            .map(|(n, e)| (n.to_string(), e.clone())),
    );
    params.copy_values_from(&relevant)
}

/// Rebuilds a model from a checkpoint alone.
pub fn load_model(path: &Path) -> Result<(Model, RunConfig, u64)> {
    let store = checkpoint::load::<f32>(path)?;
    let bytes: Vec<u8> = store
        .get("meta.config")
        .map_err(|_| Error::Checkpoint("checkpoint lacks `meta.config`".into()))?
        .tensor
        .values()
        .iter()
        .map(|&v| v as u8)
        .collect();
    let config: RunConfig =
        serde_json::from_slice(&bytes).map_err(|e| Error::Checkpoint(format!("bad embedded config: {e}")))?;
    let found = variant_of(&store)?;
    if found != config.field.variant {
        return Err(Error::VariantMismatch {
            expected: config.field.variant.name().into(),
            found: found.name().into(),
        });
    }
    let scalar = |name: &str| -> Result<Vec<f32>> {
        Ok(store
            .get(name)
            .map_err(|_| Error::Checkpoint(format!("checkpoint lacks `{name}`")))?
            .tensor
            .values()
            .to_vec())
    };
    let num_app = scalar("meta.num_appearance")?[0] as usize;
    let bg = scalar("meta.background")?;
    let field = Field::new(config.field.clone(), num_app)?;
    let mut params = field.init_params::<f32>(config.train.seed);
    copy_checked(&mut params, &store)?;
    let model = Model {
        field,
        params,
        sampling: config.sampling.clone(),
        background: [bg[0] as f64, bg[1] as f64, bg[2] as f64],
        train_appearances: scalar("meta.train_appearances")?.iter().map(|&v| v as usize).collect(),
    };
    let step = read_split_u64(&store, "meta.step")?;
    Ok((model, config, step))
}

/// Runs `config.train.iterations` steps from scratch.
pub fn train(ds: &SceneDataset, config: RunConfig) -> Result<(Trainer, Vec<StepLog>)> {
    let mut t = Trainer::new(ds, config)?;
    let n = t.config.train.iterations;
    let mut log = Vec::with_capacity(n);
    for _ in 0..n {
        log.push(t.step(ds)?);
    }
    Ok((t, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub frame: String,
    pub fine: ChannelMetrics,
    pub mid: Option<ChannelMetrics>,
    pub coarse: Option<ChannelMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub views: Vec<ViewMetrics>,
    pub mean_fine: ChannelMetrics,
    pub mean_mid: Option<ChannelMetrics>,
    pub mean_coarse: Option<ChannelMetrics>,
}

fn channel_metrics(img: &crate::renderer::ImageBuf, gt: &crate::renderer::ImageBuf) -> Result<ChannelMetrics> {
    Ok(ChannelMetrics {
        psnr: psnr(img, gt)?,
        ssim: ssim(img, gt)?,
    })
}

fn mean_of<'a>(it: impl Iterator<Item = &'a ChannelMetrics>) -> Option<ChannelMetrics> {
    let v: Vec<&ChannelMetrics> = it.collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    Some(ChannelMetrics {
        psnr: v.iter().map(|m| m.psnr).sum::<f64>() / n,
        ssim: v.iter().map(|m| m.ssim).sum::<f64>() / n,
    })
}

impl EvalReport {
    /// Builds a report and its means from per-view rows.
    pub fn from_views(variant: Variant, views: Vec<ViewMetrics>) -> Result<Self> {
        let mean_fine = mean_of(views.iter().map(|v| &v.fine))
            .ok_or_else(|| Error::EmptyScene("no views to evaluate".into()))?;
        let split = views.iter().all(|v| v.mid.is_some() && v.coarse.is_some());
        Ok(Self {
            variant: variant.name().into(),
            mean_mid: if split { mean_of(views.iter().filter_map(|v| v.mid.as_ref())) } else { None },
            mean_coarse: if split { mean_of(views.iter().filter_map(|v| v.coarse.as_ref())) } else { None },
            mean_fine,
            views,
        })
    }
}

/// Renders every eval view with the mean train appearance and scores all
/// available channels against the ground-truth image.
pub fn evaluate(model: &Model, ds: &SceneDataset, chunk: usize) -> Result<EvalReport> {
    let frames = ds.indices(Split::Eval);
    let mut views = Vec::with_capacity(frames.len());
    for f in frames {
        let gt = ds.image(f);
        let imgs = model.render(&view_of(ds, f), chunk)?;
        let score = |c: Channel| -> Result<Option<ChannelMetrics>> {
            match imgs.channel(c) {
                Ok(img) => Ok(Some(channel_metrics(img, &gt)?)),
                Err(Error::ChannelUnavailable { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        };
        views.push(ViewMetrics {
            frame: ds.frames[f].name.clone(),
            fine: channel_metrics(imgs.channel(Channel::Fine)?, &gt)?,
            mid: score(Channel::Mid)?,
            coarse: score(Channel::Coarse)?,
        });
    }
    EvalReport::from_views(model.variant(), views)
}

/// The camera of dataset frame `frame`.
pub fn frame_view(ds: &SceneDataset, frame: usize) -> View {
    view_of(ds, frame)
}

#[cfg(test)]
mod tests;
