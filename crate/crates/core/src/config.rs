//! Run configuration in a flat `key = value` text format.
//!
//! Blank lines and `#` comments are ignored; keys are dotted. Lists are
//! comma-separated and grid sizes are written `rows x cols`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::detection::{BoxCoder, FocalParams, LossWeights};
use crate::error::{Error, Result};
use crate::model::{AnchorMode, ModelConfig, StreamMask};
use crate::radar::{CameraConfig, CubeDims, DatasetSpec, RadarGeometry, SceneConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub train_dir: PathBuf,
    pub eval_dir: PathBuf,
    pub train_count: usize,
    pub eval_count: usize,
    pub train_data_seed: u64,
    pub eval_data_seed: u64,
    pub output_dir: PathBuf,
    pub cube: CubeDims,
    pub camera: CameraConfig,
    pub min_targets: usize,
    pub max_targets: usize,
    pub noise_floor: f64,
    pub model: ModelConfig,
    pub offset_scale: f64,
    pub loss: LossWeights,
    pub focal: FocalParams,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Probability of zero-masking each sensor stream per training sample.
    pub stream_dropout: f64,
    /// Train on left-right mirrored scenes half of the time.
    pub mirror: bool,
    pub checkpoint_every: usize,
    pub iou_threshold: f64,
    pub subset: StreamMask,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            train_dir: "data/train".into(),
            eval_dir: "data/eval".into(),
            train_count: 64,
            eval_count: 50,
            train_data_seed: 1,
            eval_data_seed: 2,
            output_dir: "runs/default".into(),
            cube: CubeDims::default(),
            camera: CameraConfig::default(),
            min_targets: 1,
            max_targets: 3,
            noise_floor: 0.05,
            model: ModelConfig::default(),
            offset_scale: 10.0,
            loss: LossWeights::default(),
            focal: FocalParams::default(),
            steps: 200,
            batch_size: 4,
            lr: 8e-4,
            weight_decay: 1e-4,
            stream_dropout: 0.0,
            mirror: true,
            checkpoint_every: 100,
            iou_threshold: 0.3,
            subset: StreamMask::ALL,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_pair(key: &str, value: &str) -> Result<(usize, usize)> {
    let (a, b) = value
        .split_once('x')
        .ok_or_else(|| Error::config(format!("{key}: expected `rows x cols`, got {value:?}")))?;
    Ok((parse(key, a.trim())?, parse(key, b.trim())?))
}

fn parse_strides(key: &str, value: &str) -> Result<Vec<(usize, usize)>> {
    value.split(',').map(|v| parse_pair(key, v.trim())).collect()
}

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn strides(v: &[(usize, usize)]) -> String {
    v.iter().map(|(a, b)| format!("{a}x{b}")).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "data.train_dir" => self.train_dir = v.into(),
            "data.eval_dir" => self.eval_dir = v.into(),
            "data.train_count" => self.train_count = parse(key, v)?,
            "data.eval_count" => self.eval_count = parse(key, v)?,
            "data.train_seed" => self.train_data_seed = parse(key, v)?,
            "data.eval_seed" => self.eval_data_seed = parse(key, v)?,
            "data.min_targets" => self.min_targets = parse(key, v)?,
            "data.max_targets" => self.max_targets = parse(key, v)?,
            "data.noise_floor" => self.noise_floor = parse(key, v)?,
            "output_dir" => self.output_dir = v.into(),
            "radar.range_bins" => self.cube.range = parse(key, v)?,
            "radar.azimuth_bins" => self.cube.azimuth = parse(key, v)?,
            "radar.elevation_bins" => self.cube.elevation = parse(key, v)?,
            "radar.doppler_bins" => self.cube.doppler = parse(key, v)?,
            "camera.width" => self.camera.width = parse(key, v)?,
            "camera.height" => self.camera.height = parse(key, v)?,
            "camera.hfov_deg" => self.camera.hfov_rad = parse::<f64>(key, v)?.to_radians(),
            "model.backbone_widths" => m.backbone_widths = parse_list(key, v)?,
            "model.image_strides" => m.image_strides = parse_strides(key, v)?,
            "model.ra_strides" => m.ra_strides = parse_strides(key, v)?,
            "model.ea_strides" => m.ea_strides = parse_strides(key, v)?,
            "model.fpn_widths" => m.fpn_widths = parse_list(key, v)?,
            "model.use_wa_moe" => m.use_wa_moe = parse_bool(key, v)?,
            "model.fpn_skip" => m.fpn_skip = parse_bool(key, v)?,
            "model.dim" => m.dim = parse(key, v)?,
            "model.gsa_pooled" => m.gsa_pooled = parse_pair(key, v)?,
            "model.gsa_groups" => m.gsa_groups = parse(key, v)?,
            "model.gsa_dilation" => m.gsa_dilation = parse(key, v)?,
            "model.num_queries" => m.num_queries = parse(key, v)?,
            "model.anchors" => m.anchors = AnchorMode::parse(v)?,
            "model.samples" => m.samples = parse(key, v)?,
            "model.iterations" => m.iterations = parse(key, v)?,
            "model.offset_scale" => self.offset_scale = parse(key, v)?,
            "moe.num_experts" => m.moe.num_experts = parse(key, v)?,
            "moe.top_k" => m.moe.top_k = parse(key, v)?,
            "moe.hidden_mult" => m.moe.hidden_mult = parse(key, v)?,
            "moe.temperature" => m.moe.temperature = parse(key, v)?,
            "loss.cls" => self.loss.cls = parse(key, v)?,
            "loss.box" => self.loss.boxes = parse(key, v)?,
            "loss.focal_gamma" => self.focal.gamma = parse(key, v)?,
            "loss.focal_alpha" => self.focal.alpha = parse(key, v)?,
            "train.steps" => self.steps = parse(key, v)?,
            "train.batch_size" => self.batch_size = parse(key, v)?,
            "train.lr" => self.lr = parse(key, v)?,
            "train.weight_decay" => self.weight_decay = parse(key, v)?,
            "train.stream_dropout" => self.stream_dropout = parse(key, v)?,
            "train.mirror" => self.mirror = parse_bool(key, v)?,
            "train.checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "eval.iou_threshold" => self.iou_threshold = parse(key, v)?,
            "eval.subset" => self.subset = StreamMask::parse(v)?,
            other => return Err(Error::config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        vec![
            ("seed", self.seed.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
            ("data.train_dir", self.train_dir.display().to_string()),
            ("data.eval_dir", self.eval_dir.display().to_string()),
            ("data.train_count", self.train_count.to_string()),
            ("data.eval_count", self.eval_count.to_string()),
            ("data.train_seed", self.train_data_seed.to_string()),
            ("data.eval_seed", self.eval_data_seed.to_string()),
            ("data.min_targets", self.min_targets.to_string()),
            ("data.max_targets", self.max_targets.to_string()),
            ("data.noise_floor", self.noise_floor.to_string()),
            ("radar.range_bins", self.cube.range.to_string()),
            ("radar.azimuth_bins", self.cube.azimuth.to_string()),
            ("radar.elevation_bins", self.cube.elevation.to_string()),
            ("radar.doppler_bins", self.cube.doppler.to_string()),
            ("camera.width", self.camera.width.to_string()),
            ("camera.height", self.camera.height.to_string()),
            ("camera.hfov_deg", self.camera.hfov_rad.to_degrees().to_string()),
            ("model.backbone_widths", list(&m.backbone_widths)),
            ("model.image_strides", strides(&m.image_strides)),
            ("model.ra_strides", strides(&m.ra_strides)),
            ("model.ea_strides", strides(&m.ea_strides)),
            ("model.fpn_widths", list(&m.fpn_widths)),
            ("model.use_wa_moe", m.use_wa_moe.to_string()),
            ("model.fpn_skip", m.fpn_skip.to_string()),
            ("model.dim", m.dim.to_string()),
            ("model.gsa_pooled", format!("{}x{}", m.gsa_pooled.0, m.gsa_pooled.1)),
            ("model.gsa_groups", m.gsa_groups.to_string()),
            ("model.gsa_dilation", m.gsa_dilation.to_string()),
            ("model.num_queries", m.num_queries.to_string()),
            ("model.anchors", m.anchors.name().to_string()),
            ("model.samples", m.samples.to_string()),
            ("model.iterations", m.iterations.to_string()),
            ("model.offset_scale", self.offset_scale.to_string()),
            ("moe.num_experts", m.moe.num_experts.to_string()),
            ("moe.top_k", m.moe.top_k.to_string()),
            ("moe.hidden_mult", m.moe.hidden_mult.to_string()),
            ("moe.temperature", m.moe.temperature.to_string()),
            ("loss.cls", self.loss.cls.to_string()),
            ("loss.box", self.loss.boxes.to_string()),
            ("loss.focal_gamma", self.focal.gamma.to_string()),
            ("loss.focal_alpha", self.focal.alpha.to_string()),
            ("train.steps", self.steps.to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.lr", self.lr.to_string()),
            ("train.weight_decay", self.weight_decay.to_string()),
            ("train.stream_dropout", self.stream_dropout.to_string()),
            ("train.mirror", self.mirror.to_string()),
            ("train.checkpoint_every", self.checkpoint_every.to_string()),
            ("eval.iou_threshold", self.iou_threshold.to_string()),
            ("eval.subset", self.subset.name()),
        ]
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`, got {line:?}", n + 1)))?;
            cfg.set(k, v).map_err(|e| match e {
                Error::Config(msg) => Error::config(format!("line {}: {msg}", n + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn serialize(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override {o:?} is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn geometry(&self) -> RadarGeometry {
        RadarGeometry {
            dims: self.cube,
            ..RadarGeometry::default()
        }
    }

    pub fn scenes(&self) -> SceneConfig {
        SceneConfig {
            min_targets: self.min_targets,
            max_targets: self.max_targets,
            noise_floor: self.noise_floor,
            ..SceneConfig::default()
        }
    }

    pub fn coder(&self) -> BoxCoder {
        BoxCoder {
            offset_scale: self.offset_scale,
            ..BoxCoder::new(&self.geometry())
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        self.scenes().classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn dataset_spec(&self, seed: u64, count: usize) -> DatasetSpec {
        DatasetSpec {
            seed,
            count,
            geometry: self.geometry(),
            camera: self.camera,
            scenes: self.scenes(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry().validate()?;
        self.scenes().validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        if self.model.num_classes != self.scenes().classes.len() {
            return Err(Error::config(format!(
                "model predicts {} classes but scenes contain {}",
                self.model.num_classes,
                self.scenes().classes.len()
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("train.lr {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.stream_dropout) {
            return Err(Error::config(format!("train.stream_dropout {} must lie in [0, 1)", self.stream_dropout)));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::config(format!("eval.iou_threshold {} must lie in (0, 1]", self.iou_threshold)));
        }
        if self.offset_scale <= 0.0 {
            return Err(Error::config("model.offset_scale must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.serialize()).unwrap(), c);
        c.validate().unwrap();
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = RunConfig::parse("# desk run\n\nseed = 11  # trailing\nmodel.fpn_widths = 16, 32\nmodel.gsa_pooled = 3 x 5\n").unwrap();
        assert_eq!(c.seed, 11);
        assert_eq!(c.model.fpn_widths, vec![16, 32]);
        assert_eq!(c.model.gsa_pooled, (3, 5));
    }

    #[test]
    fn unknown_key_names_line() {
        let e = RunConfig::parse("seed = 1\nbogus = 2\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        assert!(RunConfig::parse("seed 1").is_err());
        assert!(RunConfig::parse("train.lr = fast").is_err());
    }

    #[test]
    fn overrides_apply_in_order() {
        let mut c = RunConfig::default();
        c.apply_overrides(&["train.lr=0.5", "train.lr=0.25", "eval.subset=ra"]).unwrap();
        assert_eq!(c.lr, 0.25);
        assert_eq!(c.subset, StreamMask::RA);
        assert!(c.apply_overrides(&["nokey"]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(
            seed in any::<u64>(),
            lr in 1e-6f64..1.0,
            hfov in 30.0f64..120.0,
            widths in proptest::collection::vec(1usize..128, 2..4),
            experts in 1usize..8,
            wa in any::<bool>(),
            subset in 0usize..5,
            dropout in 0.0f64..0.9,
        ) {
            let mut c = RunConfig { seed, lr, stream_dropout: dropout, ..RunConfig::default() };
            c.camera.hfov_rad = hfov.to_radians();
            c.model.fpn_widths = widths;
            c.model.moe.num_experts = experts;
            c.model.use_wa_moe = wa;
            c.subset = [StreamMask::ALL, StreamMask::CAMERA, StreamMask::RA, StreamMask::EA, StreamMask::NONE][subset];
            let back = RunConfig::parse(&c.serialize()).unwrap();
            prop_assert_eq!(back.serialize(), c.serialize());
            prop_assert_eq!(back.seed, c.seed);
            prop_assert_eq!(back.lr, c.lr);
        }
    }
}
