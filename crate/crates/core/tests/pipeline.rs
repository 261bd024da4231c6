mod common;

use common::*;
use speechvqa_core::data::{read_dataset, write_dataset, InstructionType};
use speechvqa_core::error::{CheckpointError, TrainError};
use speechvqa_core::eval::{evaluate, EchoOracle, EvalOptions, Modality};
use speechvqa_core::training::{
    load_checkpoint, load_checkpoint_expecting, lr_at, save_checkpoint, train, train_stage2, Stage, TrainConfig,
};
use speechvqa_core::{AdapterKind, ModelBundle, ModelConfig};

fn losses(bundle: &mut ModelBundle, cfg: &TrainConfig, ds: &speechvqa_core::Dataset) -> Vec<f64> {
    train(ds, bundle, cfg, &mut |_| {})
        .unwrap()
        .log
        .iter()
        .map(|l| l.loss)
        .collect()
}

#[test]
fn same_seed_same_trajectory() {
    let ds = tiny_dataset(8, 1);
    let cfg = quick_config(2);
    let mut a = ModelBundle::new(ModelConfig::tiny(AdapterKind::Linear), 5).unwrap();
    let mut b = ModelBundle::new(ModelConfig::tiny(AdapterKind::Linear), 5).unwrap();
    let la = losses(&mut a, &cfg, &ds);
    let lb = losses(&mut b, &cfg, &ds);
    assert_eq!(la.len(), 4);
    assert_eq!(la, lb);
    assert_eq!(a.params, b.params);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let ds = tiny_dataset(4, 2);
    let mut bundle = ModelBundle::new(ModelConfig::tiny(AdapterKind::Mlp), 6).unwrap();
    let cfg = TrainConfig {
        adapter: AdapterKind::Mlp,
        ..quick_config(1)
    };
    train(&ds, &mut bundle, &cfg, &mut |_| {}).unwrap();
    save_checkpoint(&bundle, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.params, bundle.params);
    assert_eq!(back.train_state, bundle.train_state);
    assert_eq!(back.tags, vec!["stage1".to_string()]);
    let (p, q) = (bundle.probe_logits().unwrap(), back.probe_logits().unwrap());
    assert!(p.iter().zip(q.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn corrupt_and_mismatched_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let bundle = ModelBundle::new(ModelConfig::tiny(AdapterKind::Linear), 1).unwrap();
    save_checkpoint(&bundle, &path).unwrap();

    let err = load_checkpoint_expecting(&path, &ModelConfig::tiny(AdapterKind::Transformer)).unwrap_err();
    match err {
        CheckpointError::ConfigMismatch { field, .. } => assert!(field.contains("audio_adapter"), "{field}"),
        other => panic!("{other}"),
    }

    let mut bytes = std::fs::read(&path).unwrap();
    let k = bytes.len() / 2;
    bytes[k] ^= 0xff;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Checksum)));

    bytes[8] = 99;
    std::fs::write(&path, &bytes).unwrap();
    let err = load_checkpoint(&path).unwrap_err();
    assert!(err.to_string().contains("99"), "{err}");

    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadMagic)));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    let ds = tiny_dataset(8, 3);
    let cfg = quick_config(3);

    let mut full = ModelBundle::new(ModelConfig::tiny(AdapterKind::Linear), 2).unwrap();
    let all = losses(&mut full, &cfg, &ds);

    let mut part = ModelBundle::new(ModelConfig::tiny(AdapterKind::Linear), 2).unwrap();
    let first = losses(
        &mut part,
        &TrainConfig {
            max_steps: Some(3),
            ..cfg.clone()
        },
        &ds,
    );
    assert!(!part.has_tag("stage1"));
    save_checkpoint(&part, &path).unwrap();
    let mut resumed = load_checkpoint(&path).unwrap();
    let rest = losses(&mut resumed, &cfg, &ds);
    assert_eq!([first, rest].concat(), all);
    assert_eq!(resumed.params, full.params);
    assert!(resumed.has_tag("stage1"));
}

#[test]
fn stage2_requires_stage1() {
    let ds = tiny_dataset(2, 4);
    let mut bundle = ModelBundle::new(ModelConfig::tiny(AdapterKind::Linear), 1).unwrap();
    let err = train_stage2(&ds, &mut bundle, &quick_config(1)).unwrap_err();
    assert!(matches!(err, TrainError::MissingStage1));
    assert!(err.to_string().contains("stage 1"));
    let cfg = TrainConfig {
        allow_missing_stage1: true,
        max_steps: Some(1),
        ..quick_config(1)
    };
    train_stage2(&ds, &mut bundle, &cfg).unwrap();
}

#[test]
fn huge_learning_rate_reports_the_failing_step() {
    let ds = tiny_dataset(4, 5);
    let mut bundle = ModelBundle::new(ModelConfig::tiny(AdapterKind::Linear), 1).unwrap();
    let cfg = TrainConfig {
        init_lr: 1e300,
        min_lr: 1e300,
        warmup_lr: 1e300,
        warmup_steps: 0,
        grad_clip: None,
        ..quick_config(3)
    };
    match train(&ds, &mut bundle, &cfg, &mut |_| {}) {
        Err(TrainError::NonFinite { step }) => assert!(step >= 2, "step {step}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn logged_learning_rates_follow_the_schedule() {
    let ds = tiny_dataset(4, 6);
    let cfg = quick_config(2);
    let mut bundle = ModelBundle::new(ModelConfig::tiny(AdapterKind::Linear), 1).unwrap();
    let report = train(&ds, &mut bundle, &cfg, &mut |_| {}).unwrap();
    for l in &report.log {
        assert_eq!(l.lr, lr_at(l.step - 1, report.total_steps, &cfg).unwrap());
    }
}

#[test]
fn dataset_survives_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(5, 8);
    let hash = write_dataset(&ds, dir.path()).unwrap();
    assert_eq!(hash, ds.manifest.content_hash);
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.samples, ds.samples);
    let r = evaluate(&EchoOracle, &back, &EvalOptions::default()).unwrap();
    assert_eq!(r.get(InstructionType::ComplexReasoning, Modality::Text).unwrap().bleu1, 1.0);
}

#[test]
fn evaluation_leaves_the_bundle_untouched() {
    let ds = tiny_dataset(3, 9);
    let bundle = ModelBundle::new(ModelConfig::tiny(AdapterKind::Linear), 1).unwrap();
    let before = bundle.probe_logits().unwrap();
    let params = bundle.params.clone();
    let opts = EvalOptions {
        max_new: 6,
        ..EvalOptions::default()
    };
    let a = evaluate(&bundle, &ds, &opts).unwrap();
    let b = evaluate(&bundle, &ds, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(bundle.params, params);
    assert_eq!(bundle.probe_logits().unwrap(), before);
    assert_eq!(Stage::Stage1.tag(), "stage1");
}
