//! End-to-end runs: dataset synthesis, training, evaluation, cost
//! benchmarks and feature-map dumps.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::detection::{detection_loss, evaluate, BoxCoder, Detection, EvalMetrics, GroundTruthBox, MatchTarget};
use crate::error::{Error, Result};
use crate::gpf::{gsa_op_count, Gsa, GsaConfig};
use crate::model::{Model, ModelInput, StreamMask};
use crate::nn::Init;
use crate::radar::{read_manifest, write_dataset, LoadedScene, Manifest};
use crate::tensor::{
    cosine_lr, load_checkpoint, mac_count, no_grad, reset_mac_count, save_checkpoint, AdamW, Module, Parameter,
    Tensor,
};
use crate::wa_moe::{WaMoe, WaMoeConfig};

/// A scene ready for the network.
#[derive(Debug, Clone)]
pub struct Sample {
    pub index: usize,
    pub input: ModelInput,
    pub boxes: Vec<GroundTruthBox>,
    pub targets: Vec<MatchTarget>,
}

impl Sample {
    pub fn new(scene: LoadedScene, coder: &BoxCoder) -> Result<Self> {
        let targets = scene
            .boxes
            .iter()
            .map(|b| MatchTarget {
                class: b.class,
                params: coder.encode(&b.bbox),
            })
            .collect();
        Ok(Sample {
            index: scene.index,
            input: ModelInput::from_scene(&scene.cube, &scene.image)?,
            boxes: scene.boxes,
            targets,
        })
    }
}

/// Reverses the last axis of `[C×H×W]`.
fn flip_columns(x: &Tensor) -> Tensor {
    let w = x.dim(x.rank() - 1);
    let data = x.data().chunks(w).flat_map(|row| row.iter().rev().copied()).collect();
    Tensor::from_vec(x.shape(), data)
}

impl Sample {
    /// Left-right mirror image of the scene: azimuth and camera columns
    /// reversed, boxes reflected across the boresight. Exact for the
    /// symmetric default azimuth window.
    pub fn mirrored(&self, coder: &BoxCoder) -> Self {
        let boxes: Vec<GroundTruthBox> = self
            .boxes
            .iter()
            .map(|g| {
                let mut g = *g;
                g.bbox.y = -g.bbox.y;
                g.bbox.yaw = -g.bbox.yaw;
                g
            })
            .collect();
        let targets = boxes
            .iter()
            .map(|b| MatchTarget {
                class: b.class,
                params: coder.encode(&b.bbox),
            })
            .collect();
        Sample {
            index: self.index,
            input: ModelInput {
                image: flip_columns(&self.input.image),
                ra: flip_columns(&self.input.ra),
                ea: flip_columns(&self.input.ea),
            },
            boxes,
            targets,
        }
    }
}

/// Writes the training or evaluation split named by `cfg`.
pub fn synthesize_split(cfg: &RunConfig, eval_split: bool) -> Result<Manifest> {
    let (dir, seed, count) = split(cfg, eval_split);
    write_dataset(dir, &cfg.dataset_spec(seed, count))
}

fn split(cfg: &RunConfig, eval_split: bool) -> (&Path, u64, usize) {
    if eval_split {
        (&cfg.eval_dir, cfg.eval_data_seed, cfg.eval_count)
    } else {
        (&cfg.train_dir, cfg.train_data_seed, cfg.train_count)
    }
}

/// Loads every scene of a dataset, checking it against the config.
pub fn load_split(cfg: &RunConfig, root: &Path) -> Result<Vec<Sample>> {
    let manifest = read_manifest(root)?;
    if manifest.cube_dims != cfg.cube.as_array() {
        return Err(Error::config(format!(
            "dataset {} has cube {:?} but the config expects {:?}",
            root.display(),
            manifest.cube_dims,
            cfg.cube.as_array()
        )));
    }
    if manifest.image_size != [cfg.camera.height, cfg.camera.width] {
        return Err(Error::config(format!(
            "dataset {} has images {:?} but the config expects {:?}",
            root.display(),
            manifest.image_size,
            [cfg.camera.height, cfg.camera.width]
        )));
    }
    let coder = cfg.coder();
    (0..manifest.count)
        .into_par_iter()
        .map(|i| Sample::new(LoadedScene::load(root, i)?, &coder))
        .collect()
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub loss_cls: f64,
    pub loss_box: f64,
}

impl StepRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain numeric record")
    }
}

pub fn build_model(cfg: &RunConfig) -> Result<Model> {
    Model::new(cfg.model.clone(), cfg.offset_scale, cfg.seed)
}

/// Mean loss over `samples` without gradients.
pub fn mean_loss(model: &Model, cfg: &RunConfig, samples: &[Sample]) -> Result<f64> {
    let losses = samples
        .par_iter()
        .map(|s| {
            no_grad(|| {
                let out = model.forward(&s.input)?;
                Ok(detection_loss(&out.iterations, &s.targets, cfg.loss, cfg.focal)?.total.item())
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Forward, loss and backward on one sample, checking that everything fits
/// together before any update is made. Returns the parameters the loss
/// reaches; the rest (the reference confidence head) stay at their initial
/// values.
fn dry_run<'m>(model: &'m Model, cfg: &RunConfig, samples: &[Sample]) -> Result<Vec<&'m Parameter>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::config("training split contains no scenes"))?;
    let out = model.forward(&first.input)?;
    let loss = detection_loss(&out.iterations, &first.targets, cfg.loss, cfg.focal)?.total;
    if !loss.item().is_finite() {
        return Err(Error::Numeric(format!("initial loss on scene {} is {}", first.index, loss.item())));
    }
    model.zero_grad();
    loss.backward()?;
    let reached = model.parameters().into_iter().filter(|p| p.grad().is_some()).collect();
    model.zero_grad();
    Ok(reached)
}

fn drop_streams(rng: &mut ChaCha8Rng, p: f64) -> StreamMask {
    if p == 0.0 {
        return StreamMask::ALL;
    }
    let mut mask = StreamMask {
        camera: rng.random::<f64>() >= p,
        ra: rng.random::<f64>() >= p,
        ea: rng.random::<f64>() >= p,
    };
    if mask == StreamMask::NONE {
        mask = StreamMask::ALL;
    }
    mask
}

/// Where training writes its log and checkpoints.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub log: PathBuf,
    pub checkpoint: PathBuf,
}

impl TrainOutputs {
    pub fn in_dir(dir: &Path) -> Self {
        TrainOutputs {
            log: dir.join("train.jsonl"),
            checkpoint: dir.join("model.ckpt"),
        }
    }
}

/// Trains a fresh model for `cfg.steps` AdamW steps with a cosine schedule.
/// `on_step` sees every record as it is produced.
pub fn train(
    cfg: &RunConfig,
    samples: &[Sample],
    outputs: Option<&TrainOutputs>,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<(Model, Vec<StepRecord>)> {
    cfg.validate()?;
    let model = build_model(cfg)?;
    let params = dry_run(&model, cfg, samples)?;
    let mut log = match outputs {
        Some(o) => {
            if let Some(dir) = o.log.parent() {
                fs::create_dir_all(dir)?;
            }
            Some(fs::File::create(&o.log)?)
        }
        None => None,
    };
    let coder = cfg.coder();
    let mirrors: Vec<Sample> = if cfg.mirror {
        samples.iter().map(|s| s.mirrored(&coder)).collect()
    } else {
        Vec::new()
    };
    let mut opt = AdamW::new((0.9, 0.999), cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x72_6164_6172);
    let mut order: Vec<usize> = Vec::new();
    let mut records = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let lr = cosine_lr(step, cfg.steps, cfg.lr);
        let mut total: Option<Tensor> = None;
        let (mut cls, mut boxes) = (0.0, 0.0);
        for _ in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..samples.len()).rev().collect();
                order.shuffle(&mut rng);
            }
            let pick = order.pop().expect("refilled");
            let s = if cfg.mirror && rng.random::<bool>() {
                &mirrors[pick]
            } else {
                &samples[pick]
            };
            let mask = drop_streams(&mut rng, cfg.stream_dropout);
            let out = model.forward(&s.input.masked(mask))?;
            let l = detection_loss(&out.iterations, &s.targets, cfg.loss, cfg.focal)?;
            cls += l.cls;
            boxes += l.boxes;
            total = Some(match total {
                Some(t) => t.add(&l.total)?,
                None => l.total,
            });
        }
        let scale = 1.0 / cfg.batch_size as f64;
        let total = total.expect("positive batch size").mul_scalar(scale);
        let loss = total.item();
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss became {loss} at step {step}")));
        }
        model.zero_grad();
        total.backward()?;
        opt.step(&params, lr)?;
        let record = StepRecord {
            step,
            lr,
            loss,
            loss_cls: cls * scale,
            loss_box: boxes * scale,
        };
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", record.to_json())?;
        }
        on_step(&record);
        records.push(record);
        if let Some(o) = outputs {
            let done = step + 1;
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.steps {
                save_checkpoint(&o.checkpoint.with_extension(format!("step{done}.ckpt")), &model)?;
            }
        }
    }
    if let Some(o) = outputs {
        save_checkpoint(&o.checkpoint, &model)?;
    }
    Ok((model, records))
}

/// Rebuilds the configured model and loads `path` into it.
pub fn load_model(cfg: &RunConfig, path: &Path) -> Result<Model> {
    let model = build_model(cfg)?;
    load_checkpoint(path, &model)?;
    Ok(model)
}

/// All per-query detections of every sample with `mask` applied, plus metrics.
/// With every stream masked there is no sensor evidence, so no detections
/// are emitted rather than the queries' learned priors.
pub fn evaluate_split(
    model: &Model,
    cfg: &RunConfig,
    samples: &[Sample],
    mask: StreamMask,
) -> Result<(EvalMetrics, Vec<Detection>)> {
    let coder = cfg.coder();
    let active = if mask == StreamMask::NONE { &samples[..0] } else { samples };
    let per_scene = active
        .par_iter()
        .map(|s| no_grad(|| model.detections(&model.forward(&s.input.masked(mask))?, s.index, &coder)))
        .collect::<Result<Vec<_>>>()?;
    let dets: Vec<Detection> = per_scene.into_iter().flatten().collect();
    let gts: Vec<(usize, GroundTruthBox)> = samples
        .iter()
        .flat_map(|s| s.boxes.iter().map(move |b| (s.index, *b)))
        .collect();
    let metrics = evaluate(&dets, &gts, cfg.model.num_classes, cfg.iou_threshold);
    Ok((metrics, dets))
}

/// Human-readable metric table.
pub fn format_metrics(metrics: &EvalMetrics, class_names: &[String], subset: &str) -> String {
    let mut s = String::new();
    let t = metrics.threshold;
    let _ = writeln!(s, "subset {subset}");
    let _ = writeln!(s, "{:<8} {:>6} {:>6} {:>10} {:>10}", "class", "gt", "dets", format!("bev@{t}"), format!("3d@{t}"));
    for (c, (b, d)) in metrics.bev.iter().zip(&metrics.iou3d).enumerate() {
        let name = class_names.get(c).map_or("?", String::as_str);
        let _ = writeln!(s, "{name:<8} {:>6} {:>6} {:>10.4} {:>10.4}", b.num_gt, b.num_det, b.ap, d.ap);
    }
    let _ = writeln!(s, "{:<8} {:>6} {:>6} {:>10.4} {:>10.4}", "mean", "", "", metrics.mean_bev, metrics.mean_3d);
    s
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

/// Cost of one GSA forward at a given query count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GsaPoint {
    pub queries: usize,
    /// MACs of the two attention stages as executed.
    pub attention_macs: u64,
    /// Same count from the closed form.
    pub formula_macs: u64,
    /// MACs of the whole forward, projections included.
    pub forward_macs: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub wa_moe_channels: usize,
    pub wa_moe_parameters: usize,
    pub wa_moe_parameters_formula: usize,
    pub wa_moe_macs: u64,
    pub wa_moe_seconds: f64,
    pub gsa_pooled: usize,
    pub gsa_keys: usize,
    pub gsa_dim: usize,
    pub gsa_parameters: usize,
    pub gsa: Vec<GsaPoint>,
    pub gsa_slope: f64,
    pub gsa_forward_slope: f64,
    pub model_parameters: usize,
}

/// Query counts of the GSA sweep, as square grids.
pub const GSA_SWEEP: [usize; 5] = [256, 512, 1024, 2048, 4096];

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, u64, f64)> {
    reset_mac_count();
    let start = Instant::now();
    let out = no_grad(f)?;
    Ok((out, mac_count(), start.elapsed().as_secs_f64()))
}

/// Parameter and multiply-accumulate counts. The GSA sweep pools to a 12×12
/// grid against a 32×32 image map.
pub fn bench(cfg: &RunConfig) -> Result<BenchReport> {
    let channels = *cfg.model.fpn_widths.first().ok_or_else(|| Error::config("no pyramid levels"))?;
    let moe = &cfg.model.moe;
    let moe_cfg = WaMoeConfig {
        num_experts: moe.num_experts,
        top_k: moe.top_k,
        hidden: channels * moe.hidden_mult,
        temperature: moe.temperature,
        ..WaMoeConfig::new(channels)
    };
    let mut init = Init::new(cfg.seed);
    let block = WaMoe::new(&mut init, "bench_moe", moe_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut random = |shape: &[usize]| {
        Tensor::from_vec(shape, (0..shape.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect())
    };
    let x = random(&[channels, 16, 16]);
    let (_, wa_moe_macs, wa_moe_seconds) = timed(|| block.forward(&x))?;

    let (pooled_side, key_side, d) = (12, 32, cfg.model.dim);
    let groups = cfg.model.gsa_groups;
    let gsa_cfg = GsaConfig {
        pooled: (pooled_side, pooled_side),
        groups,
        dilation: cfg.model.gsa_dilation,
        ..GsaConfig::new(groups * 2, groups * 2, d)
    };
    let gsa = Gsa::new(&mut init, "bench_gsa", gsa_cfg)?;
    let image = random(&[gsa_cfg.image_channels, key_side, key_side]);
    let mut points = Vec::with_capacity(GSA_SWEEP.len());
    for n in GSA_SWEEP {
        // 2^k queries laid out as a 2^⌊k/2⌋ × 2^⌈k/2⌉ grid.
        let rows = 1usize << (n.trailing_zeros() / 2);
        let ea = random(&[gsa_cfg.ea_channels, rows, n / rows]);
        let (_, forward_macs, seconds) = timed(|| gsa.forward(&ea, &image))?;
        let attention_macs = gsa_attention_macs(&gsa, &ea, &image)?;
        points.push(GsaPoint {
            queries: n,
            attention_macs,
            formula_macs: gsa_op_count(n, gsa_cfg.pooled_len(), key_side * key_side, d),
            forward_macs,
            seconds,
        });
    }
    let slope = log_log_slope(&points.iter().map(|p| (p.queries as f64, p.attention_macs as f64)).collect::<Vec<_>>());
    let forward_slope =
        log_log_slope(&points.iter().map(|p| (p.queries as f64, p.forward_macs as f64)).collect::<Vec<_>>());
    Ok(BenchReport {
        wa_moe_channels: channels,
        wa_moe_parameters: block.num_parameters(),
        wa_moe_parameters_formula: moe_cfg.parameter_count(),
        wa_moe_macs,
        wa_moe_seconds,
        gsa_pooled: gsa_cfg.pooled_len(),
        gsa_keys: key_side * key_side,
        gsa_dim: d,
        gsa_parameters: gsa.num_parameters(),
        gsa: points,
        gsa_slope: slope,
        gsa_forward_slope: forward_slope,
        model_parameters: build_model(cfg)?.num_parameters(),
    })
}

/// MACs of the attention stages alone: the full forward minus a forward
/// whose attention is skipped.
fn gsa_attention_macs(gsa: &Gsa, ea: &Tensor, image: &Tensor) -> Result<u64> {
    let (_, total, _) = timed(|| gsa.forward(ea, image))?;
    let (_, embed, _) = timed(|| gsa.embeddings(ea, image))?;
    Ok(total - embed)
}

pub fn format_bench(r: &BenchReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "model parameters {}", r.model_parameters);
    let _ = writeln!(
        s,
        "wa_moe channels {} parameters {} (closed form {}) macs {} time {:.4}s",
        r.wa_moe_channels, r.wa_moe_parameters, r.wa_moe_parameters_formula, r.wa_moe_macs, r.wa_moe_seconds
    );
    let _ = writeln!(
        s,
        "gsa pooled {} keys {} dim {} parameters {}",
        r.gsa_pooled, r.gsa_keys, r.gsa_dim, r.gsa_parameters
    );
    let _ = writeln!(s, "{:>6} {:>14} {:>14} {:>14} {:>10}", "N", "attn_macs", "formula", "forward_macs", "seconds");
    for p in &r.gsa {
        let _ = writeln!(
            s,
            "{:>6} {:>14} {:>14} {:>14} {:>10.4}",
            p.queries, p.attention_macs, p.formula_macs, p.forward_macs, p.seconds
        );
    }
    let _ = writeln!(s, "gsa log-log slope {:.4} (forward {:.4})", r.gsa_slope, r.gsa_forward_slope);
    s
}

/// Binary portable graymap of `x: [C×H×W]`, channels tiled row-major in a
/// near-square grid and min–max scaled to 0..=255.
pub fn feature_pgm(x: &Tensor) -> Result<Vec<u8>> {
    if x.rank() != 3 {
        return Err(Error::dim(format!("feature dump needs [C, H, W], got {:?}", x.shape())));
    }
    let (c, h, w) = (x.dim(0), x.dim(1), x.dim(2));
    let cols = (c as f64).sqrt().ceil() as usize;
    let rows = c.div_ceil(cols);
    let (width, height) = (cols * w, rows * h);
    let data = x.data();
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut pixels = vec![0u8; width * height];
    for ch in 0..c {
        let (gr, gc) = (ch / cols, ch % cols);
        for i in 0..h {
            for j in 0..w {
                let v = (data[(ch * h + i) * w + j] - lo) / span;
                pixels[(gr * h + i) * width + gc * w + j] = (v * 255.0).round() as u8;
            }
        }
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

/// Writes pre- and post-block maps of the finest pyramid level of each
/// stream for one scene. Returns the files written.
pub fn inspect(model: &Model, sample: &Sample, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let traces = no_grad(|| model.traces(&sample.input))?;
    let mut written = Vec::new();
    for (name, levels) in [("image", &traces.image), ("ra", &traces.ra), ("ea", &traces.ea)] {
        let level = levels.first().ok_or_else(|| Error::Internal(format!("{name} stream has no levels")))?;
        for (tag, t) in [("pre", &level.merged), ("post", &level.block_out)] {
            let path = dir.join(format!("scene{:04}_{name}_{tag}.pgm", sample.index));
            fs::write(&path, feature_pgm(t)?)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_laws() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0].iter().map(|&x: &f64| (x, 3.0 * x.powi(2))).collect();
        assert!((log_log_slope(&pts) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pgm_header_and_size() {
        let x = Tensor::from_vec(&[3, 2, 4], (0..24).map(f64::from).collect());
        let bytes = feature_pgm(&x).unwrap();
        let header = b"P5\n8 4\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 32);
        assert_eq!(bytes[header.len()], 0);
        assert!(bytes.contains(&255));
    }

    #[test]
    fn mirror_reflects_boxes_and_columns() {
        use crate::detection::Box3D;
        let coder = BoxCoder::new(&crate::radar::RadarGeometry::default());
        let bbox = Box3D::new([20.0, 3.0, -0.7], [1.9, 4.5, 1.6], 0.2);
        let gt = GroundTruthBox {
            class: 1,
            bbox,
            radial_velocity: 0.0,
        };
        let ramp = |shape: &[usize]| Tensor::from_vec(shape, (0..shape.iter().product()).map(|i| i as f64).collect());
        let s = Sample {
            index: 0,
            input: ModelInput {
                image: ramp(&[3, 2, 4]),
                ra: ramp(&[6, 4, 4]),
                ea: ramp(&[6, 2, 4]),
            },
            boxes: vec![gt],
            targets: vec![MatchTarget {
                class: 1,
                params: coder.encode(&bbox),
            }],
        };
        let m = s.mirrored(&coder);
        assert_eq!(&m.input.image.data()[..4], &[3.0, 2.0, 1.0, 0.0]);
        let (a, b) = (s.targets[0].params, m.targets[0].params);
        assert!((a[0] + b[0] - 10.0).abs() < 1e-12, "u reflects about the centre column");
        assert!((a[1] - b[1]).abs() < 1e-12);
        assert!((a[6] + b[6]).abs() < 1e-12 && (a[7] - b[7]).abs() < 1e-12);
        let back = m.mirrored(&coder);
        assert_eq!(back.input.ra.data(), s.input.ra.data());
        assert_eq!(back.boxes, s.boxes);
    }

    #[test]
    fn stream_dropout_never_masks_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            assert_ne!(drop_streams(&mut rng, 0.9), StreamMask::NONE);
        }
        assert_eq!(drop_streams(&mut rng, 0.0), StreamMask::ALL);
    }
}
