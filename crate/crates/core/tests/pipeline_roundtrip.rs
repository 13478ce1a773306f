//! Library-level run: synthesize, train a few steps, reload the checkpoint
//! and evaluate.

use wrcfusion_core::config::RunConfig;
use wrcfusion_core::model::StreamMask;
use wrcfusion_core::pipeline::{self, TrainOutputs};

fn small_config(root: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig {
        train_dir: root.join("train"),
        eval_dir: root.join("eval"),
        output_dir: root.join("out"),
        ..RunConfig::default()
    };
    cfg.apply_overrides(&["data.train_count=4", "data.eval_count=3", "train.steps=4", "train.batch_size=2", "train.checkpoint_every=2"])
        .unwrap();
    cfg
}

#[test]
fn checkpoint_reload_reproduces_detections() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    pipeline::synthesize_split(&cfg, false).unwrap();
    pipeline::synthesize_split(&cfg, true).unwrap();
    let train = pipeline::load_split(&cfg, &cfg.train_dir).unwrap();
    let eval = pipeline::load_split(&cfg, &cfg.eval_dir).unwrap();

    let outputs = TrainOutputs::in_dir(&cfg.output_dir);
    std::fs::create_dir_all(&cfg.output_dir).unwrap();
    let mut seen = Vec::new();
    let (model, log) = pipeline::train(&cfg, &train, Some(&outputs), |r| seen.push(r.step)).unwrap();
    assert_eq!(seen, vec![0, 1, 2, 3]);
    assert_eq!(log.len(), 4);
    for r in &log {
        let weighted = cfg.loss.cls * r.loss_cls + cfg.loss.boxes * r.loss_box;
        assert!(r.loss.is_finite() && (r.loss - weighted).abs() < 1e-9 * r.loss.max(1.0), "{r:?}");
    }
    // Cosine schedule: starts at lr0 and decays.
    assert_eq!(log[0].lr, cfg.lr);
    assert!(log.windows(2).all(|w| w[1].lr < w[0].lr));
    assert_eq!(std::fs::read_to_string(&outputs.log).unwrap().lines().count(), 4);

    let reloaded = pipeline::load_model(&cfg, &outputs.checkpoint).unwrap();
    let (m1, d1) = pipeline::evaluate_split(&model, &cfg, &eval, StreamMask::ALL).unwrap();
    let (m2, d2) = pipeline::evaluate_split(&reloaded, &cfg, &eval, StreamMask::ALL).unwrap();
    assert_eq!(d1.len(), cfg.model.num_queries * eval.len());
    assert_eq!(format!("{d1:?}"), format!("{d2:?}"));
    assert_eq!(m1.mean_bev, m2.mean_bev);

    let (none, dets) = pipeline::evaluate_split(&model, &cfg, &eval, StreamMask::NONE).unwrap();
    assert!(dets.is_empty());
    assert_eq!(none.mean_bev, 0.0);
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.stream_dropout = 0.3;
    pipeline::synthesize_split(&cfg, false).unwrap();
    let train = pipeline::load_split(&cfg, &cfg.train_dir).unwrap();
    let (_, a) = pipeline::train(&cfg, &train, None, |_| {}).unwrap();
    let (_, b) = pipeline::train(&cfg, &train, None, |_| {}).unwrap();
    let text = |log: &[pipeline::StepRecord]| log.iter().map(|r| r.to_json()).collect::<Vec<_>>().join("\n");
    assert_eq!(text(&a), text(&b));
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    pipeline::synthesize_split(&cfg, false).unwrap();
    let train = pipeline::load_split(&cfg, &cfg.train_dir).unwrap();
    let outputs = TrainOutputs::in_dir(&cfg.output_dir);
    std::fs::create_dir_all(&cfg.output_dir).unwrap();
    pipeline::train(&cfg, &train, Some(&outputs), |_| {}).unwrap();

    let mut other = cfg.clone();
    other.set("model.dim", "32").unwrap();
    let Err(err) = pipeline::load_model(&other, &outputs.checkpoint) else {
        panic!("checkpoint loaded into a model of another width");
    };
    let err = err.to_string();
    assert!(err.contains("shape") || err.contains("mismatch"), "{err}");
}

#[test]
fn dataset_geometry_is_checked_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    pipeline::synthesize_split(&cfg, false).unwrap();
    let mut other = cfg.clone();
    other.set("radar.doppler_bins", "8").unwrap();
    assert!(pipeline::load_split(&other, &cfg.train_dir).is_err());
}
