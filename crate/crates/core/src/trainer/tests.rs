use super::*;
use crate::encoders::HashEncodingConfig;
use crate::scenegen::{generate_dataset, CameraRig, GenOptions, OracleScene};

fn tiny_dataset() -> SceneDataset {
    let opts = GenOptions {
        n_quadrature: 128,
        ..Default::default()
    };
    generate_dataset(&OracleScene::named("default").unwrap(), 4, 2, (8, 8), CameraRig::Orbit, 3, &opts).unwrap()
}

fn tiny_config(variant: Variant) -> RunConfig {
    RunConfig {
        field: FieldConfig {
            variant,
            hash: HashEncodingConfig {
                table_size: 1 << 12,
                grid_resolution: 32,
                ..Default::default()
            },
            proposal_hash: HashEncodingConfig {
                table_size: 1 << 8,
                features_per_entry: 2,
                grid_resolution: 16,
                ..Default::default()
            },
            ..Default::default()
        },
        sampling: SamplerConfig {
            n_uniform: 8,
            n_log: 8,
            resample_counts: vec![12, 8],
            ..Default::default()
        },
        loss: LossConfig::default(),
        train: TrainConfig {
            iterations: 6,
            rays_per_batch: 32,
            pretrain_steps: 20,
            seed: 5,
            ..Default::default()
        },
    }
}

fn bits(p: &ParamStore<f32>, prefix: &str) -> Vec<(String, Vec<u32>)> {
    p.iter()
        .filter(|(n, _)| n.starts_with(prefix))
        .map(|(n, e)| (n.to_string(), e.tensor.values().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn zero_iterations_keep_initialisation() {
    let ds = tiny_dataset();
    let mut cfg = tiny_config(Variant::Enhance);
    cfg.train.iterations = 0;
    let (t, log) = train(&ds, cfg.clone()).unwrap();
    assert!(log.is_empty());
    let fresh = Trainer::new(&ds, cfg.clone()).unwrap();
    assert_eq!(t.model.params, fresh.model.params);
    let init = t.model.field.init_params::<f32>(cfg.train.seed);
    assert_eq!(bits(&t.model.params, "field."), bits(&init, "field."));
    assert_eq!(bits(&t.model.params, "prop"), bits(&init, "prop"));
}

#[test]
fn seeded_runs_are_identical_and_log_sums() {
    let ds = tiny_dataset();
    let (a, la) = train(&ds, tiny_config(Variant::Enhance)).unwrap();
    let (b, lb) = train(&ds, tiny_config(Variant::Enhance)).unwrap();
    assert_eq!(la, lb);
    assert_eq!(a.model.params, b.model.params);
    for row in &la {
        let l = row.loss;
        let sum = l.prop + l.fine_mse + l.sh_fine + l.sh_mid + l.sh_coarse;
        assert!((l.total - sum).abs() < 1e-6);
        assert!([l.prop, l.fine_mse, l.sh_fine, l.sh_mid, l.sh_coarse].iter().all(|v| *v >= 0.0));
    }
    let mut other = tiny_config(Variant::Enhance);
    other.train.seed = 6;
    let (_, lc) = train(&ds, other).unwrap();
    assert_ne!(la, lc);
}

#[test]
fn frozen_decoders_never_change() {
    let ds = tiny_dataset();
    let mut t = Trainer::new(&ds, tiny_config(Variant::Enhance)).unwrap();
    let before = bits(&t.model.params, "decoder.");
    assert!(!before.is_empty());
    let field_before = bits(&t.model.params, "field.");
    for _ in 0..4 {
        t.step(&ds).unwrap();
    }
    assert_eq!(bits(&t.model.params, "decoder."), before);
    assert_ne!(bits(&t.model.params, "field."), field_before);
}

#[test]
fn no_multiperf_logs_zero_sh_terms() {
    let ds = tiny_dataset();
    let (_, log) = train(&ds, tiny_config(Variant::NoMultiperf)).unwrap();
    for row in log {
        assert_eq!((row.loss.sh_fine, row.loss.sh_mid, row.loss.sh_coarse), (0.0, 0.0, 0.0));
    }
}

#[test]
fn resume_matches_straight_run() {
    let ds = tiny_dataset();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt").join("step3.ckpt");
    let cfg = tiny_config(Variant::Enhance);

    let (straight, log) = train(&ds, cfg.clone()).unwrap();

    let mut first = Trainer::new(&ds, cfg.clone()).unwrap();
    for _ in 0..3 {
        first.step(&ds).unwrap();
    }
    first.save_checkpoint(&path).unwrap();
    let mut resumed = Trainer::resume(&ds, cfg.clone(), &path).unwrap();
    assert_eq!(resumed.steps_done(), 3);
    assert_eq!(resumed.model.params, first.model.params);
    let mut tail = Vec::new();
    for _ in 3..6 {
        tail.push(resumed.step(&ds).unwrap());
    }
    for (a, b) in tail.iter().zip(&log[3..]) {
        assert!((a.loss.total - b.loss.total).abs() < 1e-5, "{a:?} vs {b:?}");
    }
    assert_eq!(resumed.model.params, straight.model.params);

    let mut wrong = cfg.clone();
    wrong.field.variant = Variant::Test1;
    let err = Trainer::resume(&ds, wrong, &path).err().unwrap().to_string();
    assert!(err.contains("test1") && err.contains("enhance"), "{err}");
}

#[test]
fn load_model_renders_like_the_trainer() {
    let ds = tiny_dataset();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut cfg = tiny_config(Variant::Test2);
    cfg.train.iterations = 2;
    let (t, _) = train(&ds, cfg.clone()).unwrap();
    t.save_checkpoint(&path).unwrap();
    let (m, back_cfg, step) = load_model(&path).unwrap();
    assert_eq!(back_cfg, cfg);
    assert_eq!(step, 2);
    assert_eq!(m.params, t.model.params);
    let view = frame_view(&ds, 0);
    assert_eq!(m.render(&view, 16).unwrap().fine.data, t.model.render(&view, 64).unwrap().fine.data);

    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"ENERF1 not really").unwrap();
    assert!(load_model(&bad).is_err());
}

#[test]
fn evaluation_report_means_and_channels() {
    let ds = tiny_dataset();
    let mut cfg = tiny_config(Variant::Enhance);
    cfg.train.iterations = 1;
    let (t, _) = train(&ds, cfg).unwrap();
    let rep = evaluate(&t.model, &ds, 32).unwrap();
    assert_eq!(rep.views.len(), 2);
    let mean = rep.views.iter().map(|v| v.fine.psnr).sum::<f64>() / 2.0;
    assert!((rep.mean_fine.psnr - mean).abs() < 1e-9);
    let mean = rep.views.iter().map(|v| v.mid.as_ref().unwrap().ssim).sum::<f64>() / 2.0;
    assert!((rep.mean_mid.as_ref().unwrap().ssim - mean).abs() < 1e-9);

    // the fine score is computed on the fine image
    let f = ds.indices(Split::Eval)[0];
    let imgs = t.model.render(&frame_view(&ds, f), 32).unwrap();
    assert_eq!(rep.views[0].fine.psnr, psnr(&imgs.fine, &ds.image(f)).unwrap());

    let gt = ds.image(f);
    let m = channel_metrics(&gt, &gt).unwrap();
    assert_eq!(m.psnr, 99.0);
    assert!((m.ssim - 1.0).abs() < 1e-12);
}

#[test]
fn evaluation_without_split_colors() {
    let ds = tiny_dataset();
    let mut cfg = tiny_config(Variant::NoMultiperf);
    cfg.train.iterations = 0;
    let (t, _) = train(&ds, cfg).unwrap();
    let rep = evaluate(&t.model, &ds, 64).unwrap();
    assert!(rep.mean_mid.is_none() && rep.views.iter().all(|v| v.coarse.is_none()));
}

#[test]
fn nan_loss_aborts_with_batch_dump() {
    let ds = tiny_dataset();
    let mut t = Trainer::new(&ds, tiny_config(Variant::Enhance)).unwrap();
    t.model.params.get_mut("field.hash").unwrap().tensor.values_mut().fill(f32::NAN);
    match t.step(&ds) {
        Err(Error::NanLoss { step, detail }) => {
            assert_eq!(step, 0);
            assert!(detail.contains("batch of 32 rays"), "{detail}");
        }
        other => panic!("expected NaN abort, got {:?}", other.map(|l| l.loss)),
    }
}

#[test]
fn config_rejects_mismatched_rounds() {
    let mut cfg = tiny_config(Variant::Enhance);
    cfg.sampling.resample_counts = vec![8];
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}
