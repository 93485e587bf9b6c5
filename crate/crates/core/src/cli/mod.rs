//! Command-line front end: dataset generation, training, rendering,
//! evaluation and the ablation matrix.

mod ablate;
mod config;

pub use ablate::{median, AblationRow, ABLATION_COLUMNS};
pub use config::{CliConfig, IoConfig, SceneConfig};

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::field::Variant;
use crate::geometry::{Intrinsics, Pose};
use crate::renderer::{write_png, Channel, View};
use crate::scenegen::{generate_dataset, load_dataset, save_dataset, CameraRig, GenOptions, OracleScene, SceneDataset, Split};
use crate::trainer::{evaluate, frame_view, load_model, EvalReport, StepLog, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "enerf", version, about = "Radiance-field training and rendering on synthetic oracle scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic scene into a dataset directory.
    Gen(GenArgs),
    /// Train one variant on a dataset and evaluate it on the held-out views.
    Train(TrainArgs),
    /// Render views of a checkpoint.
    Render(RenderArgs),
    /// Evaluate a checkpoint on the held-out views of a dataset.
    Eval(EvalArgs),
    /// Train every (variant, seed) pair and tabulate held-out metrics.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Built-in scene (default, specular, calibration) or a scene TOML file [default: default]
    #[arg(long)]
    pub scene: Option<String>,
    /// Output dataset directory
    #[arg(long)]
    pub out: PathBuf,
    /// Number of train views [default: 30]
    #[arg(long)]
    pub views: Option<usize>,
    /// Number of held-out views [default: 5]
    #[arg(long)]
    pub eval_views: Option<usize>,
    /// Resolution as WxH [default: 64x64]
    #[arg(long)]
    pub res: Option<String>,
    /// Camera rig: orbit, forward or spiral [default: orbit]
    #[arg(long)]
    pub rig: Option<String>,
    /// Seed for pose jitter [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Config file (TOML with sections scene, sampling, field, loss, train, io)
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `gen`
    #[arg(long)]
    pub data: PathBuf,
    /// enhance, no_multiperf, no_pretrained, test1 or test2 [default: enhance]
    #[arg(long)]
    pub variant: Option<String>,
    /// Run directory (config.echo, loss.csv, ckpt/, renders/, eval.json)
    #[arg(long)]
    pub out: PathBuf,
    /// Training steps [default: 2000]
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Rays per batch [default: 1024]
    #[arg(long)]
    pub rays: Option<usize>,
    /// Seed for initialisation and batch sampling [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from this checkpoint
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Config file (TOML with sections scene, sampling, field, loss, train, io)
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Checkpoint file
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Comma-separated poses: frame names or indices of --data, or files holding 16 row-major floats
    #[arg(long)]
    pub pose: String,
    /// Dataset supplying frames and intrinsics
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated channels among fine, mid, coarse
    #[arg(long, default_value = "fine")]
    pub channels: String,
    /// Resolution WxH for pose files without --data [default: 64x64]
    #[arg(long)]
    pub res: Option<String>,
    /// Horizontal field of view in degrees for pose files without --data [default: 45]
    #[arg(long)]
    pub fov: Option<f64>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Write the report here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated variants [default: all five]
    #[arg(long)]
    pub variants: Option<String>,
    /// Comma-separated seeds [default: 0]
    #[arg(long)]
    pub seeds: Option<String>,
    /// Output directory (one run directory per pair plus ablation.csv and ablation.txt)
    #[arg(long)]
    pub out: PathBuf,
    /// Training steps per run [default: from config, else 2000]
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Rays per batch [default: from config, else 1024]
    #[arg(long)]
    pub rays: Option<usize>,
    /// Config file (TOML with sections scene, sampling, field, loss, train, io)
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Exit status for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::MissingFile(_)
        | Error::MissingFrame { .. }
        | Error::Manifest { .. }
        | Error::ResolutionMismatch { .. }
        | Error::Checkpoint(_)
        | Error::VariantMismatch { .. }
        | Error::UnknownVariant(_)
        | Error::ChannelUnavailable { .. }
        | Error::Config(_)
        | Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a).map(|_| EXIT_OK),
        Command::Render(a) => cmd_render(&a).map(|_| EXIT_OK),
        Command::Eval(a) => cmd_eval(&a),
        Command::Ablate(a) => cmd_ablate(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn parse_res(s: &str) -> Result<(u32, u32)> {
    let bad = || Error::InvalidArgument(format!("resolution `{s}` is not WxH"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: u32 = w.trim().parse().map_err(|_| bad())?;
    let h: u32 = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

fn load_config(path: Option<&Path>) -> Result<CliConfig> {
    match path {
        Some(p) => CliConfig::from_file(p),
        None => Ok(CliConfig::default()),
    }
}

fn resolve_scene(name: &str) -> Result<OracleScene> {
    let path = Path::new(name);
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return OracleScene::from_toml(&text);
    }
    OracleScene::named(name)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn cmd_gen(a: &GenArgs) -> Result<i32> {
    let mut cfg = load_config(a.config.as_deref())?;
    let s = &mut cfg.scene;
    if let Some(v) = &a.scene {
        s.name = v.clone();
    }
    if let Some(v) = a.views {
        s.train_views = v;
    }
    if let Some(v) = a.eval_views {
        s.eval_views = v;
    }
    if let Some(v) = &a.res {
        (s.width, s.height) = parse_res(v)?;
    }
    if let Some(v) = &a.rig {
        s.rig = v.clone();
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    if s.train_views == 0 || s.eval_views == 0 {
        return Err(Error::InvalidArgument("--views and --eval-views must be at least 1".into()));
    }
    let rig: CameraRig = s.rig.parse().map_err(Error::InvalidArgument)?;
    let scene = resolve_scene(&s.name)?;
    let opts = GenOptions {
        fov_deg: s.fov_deg,
        near: s.near,
        far: s.far,
        n_quadrature: s.n_quadrature,
        radius: s.radius,
    };
    let ds = generate_dataset(&scene, s.train_views, s.eval_views, (s.width, s.height), rig, s.seed, &opts)?;
    save_dataset(&ds, &a.out)?;
    log::info!("wrote {} frames to {}", ds.frames.len(), a.out.display());
    Ok(EXIT_OK)
}

fn loss_row(l: &StepLog) -> [String; 8] {
    let f = |v: f64| format!("{v:.8e}");
    [
        l.step.to_string(),
        f(l.loss.total),
        f(l.loss.prop),
        f(l.loss.fine_mse),
        f(l.loss.sh_fine),
        f(l.loss.sh_mid),
        f(l.loss.sh_coarse),
        format!("{:.4}", l.psnr_train),
    ]
}

pub const LOSS_COLUMNS: [&str; 8] = ["step", "total", "prop", "fine_mse", "sh_fine", "sh_mid", "sh_coarse", "psnr_train"];

/// Trains into `out` and returns the final report. Shared by `train` and `ablate`.
pub fn train_run(ds: &SceneDataset, cfg: &CliConfig, out: &Path, resume: Option<&Path>) -> Result<EvalReport> {
    create_dir(out)?;
    create_dir(&out.join("ckpt"))?;
    create_dir(&out.join("renders"))?;
    write_text(&out.join("config.echo"), &cfg.to_toml()?)?;
    let rc = cfg.run_config();
    let mut trainer = match resume {
        Some(p) => Trainer::resume(ds, rc, p)?,
        None => Trainer::new(ds, rc)?,
    };
    let csv_path = out.join("loss.csv");
    let append = resume.is_some() && csv_path.exists();
    let file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&csv_path)
        .map_err(|e| Error::io(&csv_path, e))?;
    let mut csv = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| Error::io(&csv_path, std::io::Error::other(e));
    if !append {
        csv.write_record(LOSS_COLUMNS).map_err(csv_err)?;
    }
    let tc = cfg.train.clone();
    let every = cfg.io.log_every.max(1);
    while (trainer.steps_done() as usize) < tc.iterations {
        let row = match trainer.step(ds) {
            Ok(r) => r,
            Err(e @ Error::NanLoss { .. }) => {
                if let Error::NanLoss { detail, .. } = &e {
                    let _ = write_text(&out.join("nan_dump.txt"), detail);
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let done = trainer.steps_done() as usize;
        if row.step as usize % every == 0 || done == tc.iterations {
            csv.write_record(loss_row(&row)).map_err(csv_err)?;
            csv.flush().map_err(|e| Error::io(&csv_path, e))?;
            log::info!("step {} loss {:.5} psnr {:.2}", row.step, row.loss.total, row.psnr_train);
        }
        if tc.checkpoint_every > 0 && done % tc.checkpoint_every == 0 {
            trainer.save_checkpoint(&out.join("ckpt").join(format!("step_{done:06}.ckpt")))?;
        }
        if tc.eval_every > 0 && done % tc.eval_every == 0 && done < tc.iterations {
            let r = evaluate(&trainer.model, ds, tc.render_chunk)?;
            log::info!("step {done} held-out psnr {:.3}", r.mean_fine.psnr);
        }
    }
    csv.flush().map_err(|e| Error::io(&csv_path, e))?;
    trainer.save_checkpoint(&out.join("ckpt").join("final.ckpt"))?;

    let report = evaluate(&trainer.model, ds, tc.render_chunk)?;
    if cfg.io.write_renders {
        for f in ds.indices(Split::Eval) {
            let imgs = trainer.model.render(&frame_view(ds, f), tc.render_chunk)?;
            let stem = ds.frames[f].name.trim_end_matches(".png").to_string();
            for c in Channel::ALL {
                if let Ok(img) = imgs.channel(c) {
                    write_png(img, &out.join("renders").join(format!("{stem}_{}.png", c.name())))?;
                }
            }
        }
    }
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
    write_text(&out.join("eval.json"), &json)?;
    log::info!(
        "{}: held-out psnr {:.3} ssim {:.4}",
        report.variant,
        report.mean_fine.psnr,
        report.mean_fine.ssim
    );
    Ok(report)
}

fn load_data(path: &Path) -> Result<SceneDataset> {
    if !path.join("manifest.txt").exists() && !path.is_dir() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    load_dataset(path)
}

pub fn cmd_train(a: &TrainArgs) -> Result<EvalReport> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(v) = &a.variant {
        cfg.field.variant = v.parse::<Variant>()?;
    }
    if let Some(v) = a.iterations {
        cfg.train.iterations = v;
    }
    if let Some(v) = a.rays {
        cfg.train.rays_per_batch = v;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    cfg.validate()?;
    let ds = load_data(&a.data)?;
    train_run(&ds, &cfg, &a.out, a.resume.as_deref())
}

fn read_pose_file(path: &Path) -> Result<Pose> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let vals: std::result::Result<Vec<f64>, _> = text.split_whitespace().map(str::parse::<f64>).collect();
    let vals = vals.map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    let pose = Pose::from_row_major(&vals)?;
    pose.validate()?;
    Ok(pose)
}

fn find_frame(ds: &SceneDataset, key: &str) -> Option<usize> {
    if let Ok(i) = key.parse::<usize>() {
        return (i < ds.frames.len()).then_some(i);
    }
    ds.frames
        .iter()
        .position(|f| f.name == key || f.name.trim_end_matches(".png") == key)
}

fn parse_channels(s: &str) -> Result<Vec<Channel>> {
    s.split(',').map(|c| c.trim().parse()).collect()
}

pub fn cmd_render(a: &RenderArgs) -> Result<()> {
    let channels = parse_channels(&a.channels)?;
    let (model, cfg, _) = load_model(&a.ckpt)?;
    for &c in &channels {
        if !c.available(model.variant()) {
            return Err(Error::ChannelUnavailable {
                channel: c.name().into(),
                variant: model.variant().name().into(),
            });
        }
    }
    let ds = match &a.data {
        Some(p) => Some(load_data(p)?),
        None => None,
    };
    let (w, h) = match &a.res {
        Some(r) => parse_res(r)?,
        None => ds.as_ref().map(|d| (d.width, d.height)).unwrap_or((64, 64)),
    };
    create_dir(&a.out)?;
    for key in a.pose.split(',').map(str::trim) {
        let (stem, view) = if Path::new(key).is_file() {
            let pose = read_pose_file(Path::new(key))?;
            let (near, far) = ds.as_ref().map(|d| (d.near, d.far)).unwrap_or((0.5, 6.0));
            let intrinsics = match (&ds, a.res.is_some() || a.fov.is_some()) {
                (Some(d), false) => d.intrinsics,
                _ => Intrinsics::from_fov(w, h, a.fov.unwrap_or(45.0)),
            };
            let stem = Path::new(key)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "pose".into());
            let view = View {
                intrinsics,
                pose,
                width: w,
                height: h,
                near,
                far,
            };
            (stem, view)
        } else {
            let d = ds
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument(format!("pose `{key}` is not a file and no --data was given")))?;
            let f = find_frame(d, key).ok_or_else(|| Error::MissingFrame {
                frame: key.to_string(),
                path: a.data.clone().unwrap_or_default(),
            })?;
            (d.frames[f].name.trim_end_matches(".png").to_string(), frame_view(d, f))
        };
        let imgs = model.render(&view, cfg.train.render_chunk)?;
        for &c in &channels {
            write_png(imgs.channel(c)?, &a.out.join(format!("{stem}_{}.png", c.name())))?;
        }
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let (model, cfg, _) = load_model(&a.ckpt)?;
    let ds = load_data(&a.data)?;
    let report = evaluate(&model, &ds, cfg.train.render_chunk)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
    match &a.out {
        Some(p) => write_text(p, &json)?,
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{json}").map_err(|e| Error::io(Path::new("<stdout>"), e))?;
        }
    }
    Ok(EXIT_OK)
}

pub fn cmd_ablate(a: &AblateArgs) -> Result<i32> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(v) = a.iterations {
        cfg.train.iterations = v;
    }
    if let Some(v) = a.rays {
        cfg.train.rays_per_batch = v;
    }
    let variants: Vec<Variant> = match &a.variants {
        Some(s) => s.split(',').map(|v| v.trim().parse()).collect::<Result<_>>()?,
        None => Variant::ALL.to_vec(),
    };
    let seeds: Vec<u64> = match &a.seeds {
        Some(s) => s
            .split(',')
            .map(|v| v.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad seed `{v}`"))))
            .collect::<Result<_>>()?,
        None => vec![0],
    };
    cfg.validate()?;
    let ds = load_data(&a.data)?;
    create_dir(&a.out)?;
    let mut rows = Vec::new();
    for &v in &variants {
        for &seed in &seeds {
            let mut run = cfg.clone();
            run.field.variant = v;
            run.train.seed = seed;
            let dir = a.out.join(format!("{}_s{seed}", v.name()));
            let row = match train_run(&ds, &run, &dir, None) {
                Ok(rep) => AblationRow::from_report(v, seed, &rep),
                Err(e) => {
                    log::error!("{} seed {seed} failed: {e}", v.name());
                    AblationRow::failed(v, seed, e.to_string())
                }
            };
            rows.push(row);
        }
    }
    ablate::write_tables(&rows, &variants, &a.out)?;
    Ok(if rows.iter().any(|r| r.error.is_some()) { EXIT_RUNTIME } else { EXIT_OK })
}
