//! C interface to the enerf engine.
//!
//! Every fallible call returns an [`EnerfStatus`]; on failure the message is
//! kept per thread and read back with [`enerf_last_error_message`]. Objects
//! cross the boundary as opaque handles that the caller frees exactly once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use enerf::cli::CliConfig;
use enerf::renderer::Channel;
use enerf::scenegen::{generate_dataset, load_dataset, save_dataset, CameraRig, GenOptions, OracleScene, SceneDataset};
use enerf::trainer::{evaluate, frame_view, load_model, Model, Trainer};
use enerf::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnerfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Dataset = 4,
    Checkpoint = 5,
    Config = 6,
    ChannelUnavailable = 7,
    NanLoss = 8,
    BufferTooSmall = 9,
    Runtime = 10,
    Panic = 11,
}

/// Output channel selector for rendering and evaluation.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnerfChannel {
    Fine = 0,
    Mid = 1,
    Coarse = 2,
}

impl From<EnerfChannel> for Channel {
    fn from(c: EnerfChannel) -> Self {
        match c {
            EnerfChannel::Fine => Channel::Fine,
            EnerfChannel::Mid => Channel::Mid,
            EnerfChannel::Coarse => Channel::Coarse,
        }
    }
}

/// A set of posed views with their images.
pub struct EnerfDataset(SceneDataset);

/// Training state: model, optimizer and step counter.
pub struct EnerfTrainer(Trainer);

/// A trained model restored from a checkpoint.
pub struct EnerfModel {
    model: Model,
    chunk: usize,
}

/// Loss components of one training step.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct EnerfStepLog {
    pub step: u64,
    pub total: f64,
    pub prop: f64,
    pub fine_mse: f64,
    pub sh_fine: f64,
    pub sh_mid: f64,
    pub sh_coarse: f64,
    pub psnr_train: f64,
}

/// Mean held-out metrics. Channels the variant lacks are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct EnerfEvalSummary {
    pub views: u32,
    pub psnr_fine: f64,
    pub ssim_fine: f64,
    pub psnr_mid: f64,
    pub ssim_mid: f64,
    pub psnr_coarse: f64,
    pub ssim_coarse: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|e| {
        let end = e.nul_position();
        CString::new(&e.into_vec()[..end]).unwrap_or_default()
    });
    LAST_ERROR.with(|l| *l.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|l| *l.borrow_mut() = None);
}

fn status_of(e: &Error) -> EnerfStatus {
    match e {
        Error::Io { .. } | Error::Image { .. } => EnerfStatus::Io,
        Error::MissingFile(_) | Error::MissingFrame { .. } | Error::Manifest { .. } | Error::ResolutionMismatch { .. } => {
            EnerfStatus::Dataset
        }
        Error::Checkpoint(_) | Error::VariantMismatch { .. } => EnerfStatus::Checkpoint,
        Error::Config(_) | Error::UnknownVariant(_) => EnerfStatus::Config,
        Error::ChannelUnavailable { .. } => EnerfStatus::ChannelUnavailable,
        Error::NanLoss { .. } => EnerfStatus::NanLoss,
        Error::InvalidArgument(_) | Error::UnknownAppearance { .. } => EnerfStatus::InvalidArgument,
        _ => EnerfStatus::Runtime,
    }
}

struct Fail(EnerfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(EnerfStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic as the last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EnerfStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EnerfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            EnerfStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(EnerfStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn config_arg(toml: *const c_char) -> Result<CliConfig, Fail> {
    Ok(match opt_str_arg(toml, "config")? {
        Some(t) => CliConfig::from_toml(t)?,
        None => CliConfig::default(),
    })
}

/// Message of the last failed call on this thread, or null if it succeeded.
/// The pointer stays valid until the next enerf call on the same thread.
#[no_mangle]
pub extern "C" fn enerf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|l| l.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn enerf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Renders a dataset of a scene. `config_toml` may be null; its `scene`
/// section supplies the view counts, resolution, rig and seed.
///
/// # Safety
/// `config_toml` is null or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn enerf_dataset_generate(config_toml: *const c_char, out: *mut *mut EnerfDataset) -> EnerfStatus {
    guard(|| {
        let cfg = config_arg(config_toml)?;
        let s = &cfg.scene;
        let rig: CameraRig = s.rig.parse().map_err(|m| Fail(EnerfStatus::Config, m))?;
        let scene = OracleScene::named(&s.name)?;
        let opts = GenOptions {
            fov_deg: s.fov_deg,
            near: s.near,
            far: s.far,
            n_quadrature: s.n_quadrature,
            radius: s.radius,
        };
        let ds = generate_dataset(&scene, s.train_views, s.eval_views, (s.width, s.height), rig, s.seed, &opts)?;
        put(out, EnerfDataset(ds))
    })
}

/// # Safety
/// `dir` is a NUL-terminated path; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn enerf_dataset_load(dir: *const c_char, out: *mut *mut EnerfDataset) -> EnerfStatus {
    guard(|| {
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        put(out, EnerfDataset(load_dataset(&dir)?))
    })
}

/// # Safety
/// `ds` is a live dataset handle; `dir` is a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn enerf_dataset_save(ds: *const EnerfDataset, dir: *const c_char) -> EnerfStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        save_dataset(&ds.0, &PathBuf::from(str_arg(dir, "dir")?))?;
        Ok(())
    })
}

/// Writes the frame count and image size. Any output pointer may be null.
///
/// # Safety
/// `ds` is a live dataset handle; non-null outputs are writable.
#[no_mangle]
pub unsafe extern "C" fn enerf_dataset_info(
    ds: *const EnerfDataset,
    frames: *mut u32,
    width: *mut u32,
    height: *mut u32,
) -> EnerfStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        if let Some(f) = frames.as_mut() {
            *f = ds.frames.len() as u32;
        }
        if let Some(w) = width.as_mut() {
            *w = ds.width;
        }
        if let Some(h) = height.as_mut() {
            *h = ds.height;
        }
        Ok(())
    })
}

/// # Safety
/// `ds` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn enerf_dataset_free(ds: *mut EnerfDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Initialises training on `ds`. `config_toml` may be null for defaults;
/// `variant` may be null to keep the config's variant.
///
/// # Safety
/// `ds` is a live dataset handle; strings are null or NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn enerf_trainer_new(
    ds: *const EnerfDataset,
    config_toml: *const c_char,
    variant: *const c_char,
    out: *mut *mut EnerfTrainer,
) -> EnerfStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let mut cfg = config_arg(config_toml)?;
        if let Some(v) = opt_str_arg(variant, "variant")? {
            cfg.field.variant = v.parse()?;
        }
        cfg.validate()?;
        put(out, EnerfTrainer(Trainer::new(&ds.0, cfg.run_config())?))
    })
}

/// Continues training from a checkpoint written by [`enerf_trainer_save`].
///
/// # Safety
/// As for [`enerf_trainer_new`]; `checkpoint` is a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn enerf_trainer_resume(
    ds: *const EnerfDataset,
    config_toml: *const c_char,
    checkpoint: *const c_char,
    out: *mut *mut EnerfTrainer,
) -> EnerfStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let cfg = config_arg(config_toml)?;
        let path = PathBuf::from(str_arg(checkpoint, "checkpoint")?);
        put(out, EnerfTrainer(Trainer::resume(&ds.0, cfg.run_config(), &path)?))
    })
}

/// Runs one optimisation step. `log` may be null.
///
/// # Safety
/// `trainer` and `ds` are live handles; `log` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn enerf_trainer_step(
    trainer: *mut EnerfTrainer,
    ds: *const EnerfDataset,
    log: *mut EnerfStepLog,
) -> EnerfStatus {
    guard(|| {
        let t = handle_mut(trainer, "trainer")?;
        let ds = handle(ds, "dataset")?;
        let row = t.0.step(&ds.0)?;
        if let Some(out) = log.as_mut() {
            *out = EnerfStepLog {
                step: row.step as u64,
                total: row.loss.total,
                prop: row.loss.prop,
                fine_mse: row.loss.fine_mse,
                sh_fine: row.loss.sh_fine,
                sh_mid: row.loss.sh_mid,
                sh_coarse: row.loss.sh_coarse,
                psnr_train: row.psnr_train,
            };
        }
        Ok(())
    })
}

/// Steps completed so far, or 0 for a null handle.
///
/// # Safety
/// `trainer` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn enerf_trainer_steps_done(trainer: *const EnerfTrainer) -> u64 {
    trainer.as_ref().map_or(0, |t| t.0.steps_done())
}

/// # Safety
/// `trainer` is a live handle; `path` is a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn enerf_trainer_save(trainer: *const EnerfTrainer, path: *const c_char) -> EnerfStatus {
    guard(|| {
        let t = handle(trainer, "trainer")?;
        t.0.save_checkpoint(&PathBuf::from(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `trainer` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn enerf_trainer_free(trainer: *mut EnerfTrainer) {
    if !trainer.is_null() {
        drop(Box::from_raw(trainer));
    }
}

/// # Safety
/// `path` is a NUL-terminated path; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn enerf_model_load(path: *const c_char, out: *mut *mut EnerfModel) -> EnerfStatus {
    guard(|| {
        let (model, cfg, _) = load_model(&PathBuf::from(str_arg(path, "path")?))?;
        put(
            out,
            EnerfModel {
                model,
                chunk: cfg.train.render_chunk,
            },
        )
    })
}

/// Whether the model's variant produces `channel`.
///
/// # Safety
/// `model` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn enerf_model_has_channel(model: *const EnerfModel, channel: EnerfChannel) -> bool {
    model
        .as_ref()
        .is_some_and(|m| Channel::from(channel).available(m.model.variant()))
}

/// Renders frame `frame` of `ds` into `rgb` as `width * height * 3` row-major
/// floats in `[0, 1]`. `len` is the capacity of `rgb` in floats.
///
/// # Safety
/// `model` and `ds` are live handles; `rgb` holds at least `len` floats.
#[no_mangle]
pub unsafe extern "C" fn enerf_model_render_frame(
    model: *const EnerfModel,
    ds: *const EnerfDataset,
    frame: u32,
    channel: EnerfChannel,
    rgb: *mut f32,
    len: usize,
) -> EnerfStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let ds = &handle(ds, "dataset")?.0;
        let frame = frame as usize;
        if frame >= ds.frames.len() {
            return Err(Fail(
                EnerfStatus::InvalidArgument,
                format!("frame {frame} out of range ({} frames)", ds.frames.len()),
            ));
        }
        let need = (ds.width * ds.height * 3) as usize;
        if len < need {
            return Err(Fail(EnerfStatus::BufferTooSmall, format!("need {need} floats, got {len}")));
        }
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        let imgs = m.model.render(&frame_view(ds, frame), m.chunk)?;
        let img = imgs.channel(channel.into())?;
        std::slice::from_raw_parts_mut(rgb, need).copy_from_slice(&img.data);
        Ok(())
    })
}

/// Evaluates on the held-out views of `ds`.
///
/// # Safety
/// `model` and `ds` are live handles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn enerf_model_evaluate(
    model: *const EnerfModel,
    ds: *const EnerfDataset,
    out: *mut EnerfEvalSummary,
) -> EnerfStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let ds = handle(ds, "dataset")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = evaluate(&m.model, &ds.0, m.chunk)?;
        let split = |c: Option<enerf::trainer::ChannelMetrics>| c.map_or((f64::NAN, f64::NAN), |c| (c.psnr, c.ssim));
        let (psnr_mid, ssim_mid) = split(r.mean_mid);
        let (psnr_coarse, ssim_coarse) = split(r.mean_coarse);
        *out = EnerfEvalSummary {
            views: r.views.len() as u32,
            psnr_fine: r.mean_fine.psnr,
            ssim_fine: r.mean_fine.ssim,
            psnr_mid,
            ssim_mid,
            psnr_coarse,
            ssim_coarse,
        };
        Ok(())
    })
}

/// # Safety
/// `model` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn enerf_model_free(model: *mut EnerfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
