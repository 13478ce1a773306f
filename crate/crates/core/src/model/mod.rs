//! Full detector: three sensor streams, progressive fusion and the
//! refinement head.

mod encoder;

pub use encoder::{Backbone, Stream, StreamConfig};

use crate::detection::{fuse_score, BoxCoder, Detection, DetectionHead, HeadConfig, IterationOutput};
use crate::error::{Error, Result};
use crate::gpf::{anchor_features, anchor_grid, peak_anchors, DeformOutput, DeformableAttention, Gsa, GsaConfig, PathFusion, ReferenceGenerator, ReferencePoints};
use crate::nn::{Conv2d, Init, Linear};
use crate::radar::{project, RadarCube, View};
use crate::tensor::{Conv2dOptions, Module, Parameter, Tensor};
use crate::wa_moe::{FpnLevel, MoeOptions};

/// Where query anchors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorMode {
    /// Fixed cell centres of a square grid.
    Grid,
    /// Strongest local maxima of the range-azimuth amplitude map, with the
    /// grid filling missing slots.
    RadarPeaks,
}

impl AnchorMode {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "grid" => Ok(AnchorMode::Grid),
            "radar_peaks" => Ok(AnchorMode::RadarPeaks),
            _ => Err(Error::config(format!("unknown anchor mode {name:?}; expected grid or radar_peaks"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AnchorMode::Grid => "grid",
            AnchorMode::RadarPeaks => "radar_peaks",
        }
    }
}

/// Octaves of the sinusoidal anchor encoding.
const ANCHOR_BANDS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub backbone_widths: Vec<usize>,
    pub image_strides: Vec<(usize, usize)>,
    pub ra_strides: Vec<(usize, usize)>,
    pub ea_strides: Vec<(usize, usize)>,
    pub fpn_widths: Vec<usize>,
    pub use_wa_moe: bool,
    pub fpn_skip: bool,
    pub moe: MoeOptions,
    pub dim: usize,
    pub gsa_pooled: (usize, usize),
    pub gsa_groups: usize,
    pub gsa_dilation: usize,
    pub num_queries: usize,
    pub anchors: AnchorMode,
    pub samples: usize,
    pub iterations: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone_widths: vec![16, 32, 64],
            image_strides: vec![(2, 2), (2, 2), (2, 2)],
            ra_strides: vec![(1, 1), (2, 2), (2, 2)],
            ea_strides: vec![(1, 1), (1, 2), (2, 2)],
            fpn_widths: vec![32, 64],
            use_wa_moe: true,
            fpn_skip: true,
            moe: MoeOptions::default(),
            dim: 64,
            gsa_pooled: (4, 4),
            gsa_groups: 4,
            gsa_dilation: 2,
            num_queries: 36,
            anchors: AnchorMode::RadarPeaks,
            samples: 4,
            iterations: 3,
            num_classes: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.backbone_widths.len();
        for (name, s) in [("image", &self.image_strides), ("ra", &self.ra_strides), ("ea", &self.ea_strides)] {
            if s.len() != n {
                return Err(Error::config(format!("{name} strides list {} stages, backbone has {n}", s.len())));
            }
        }
        if self.fpn_widths.len() < 2 || self.fpn_widths.len() > n {
            return Err(Error::config(format!(
                "pyramid needs between 2 and {n} levels, got {}",
                self.fpn_widths.len()
            )));
        }
        anchor_grid(self.num_queries)?;
        Ok(())
    }
}

/// Which sensor streams are present; absent streams are zero-filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamMask {
    pub camera: bool,
    pub ra: bool,
    pub ea: bool,
}

impl StreamMask {
    pub const ALL: StreamMask = StreamMask { camera: true, ra: true, ea: true };
    pub const NONE: StreamMask = StreamMask { camera: false, ra: false, ea: false };
    pub const CAMERA: StreamMask = StreamMask { camera: true, ra: false, ea: false };
    pub const RA: StreamMask = StreamMask { camera: false, ra: true, ea: false };
    pub const EA: StreamMask = StreamMask { camera: false, ra: false, ea: true };

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "all" => Self::ALL,
            "none" => Self::NONE,
            "camera" => Self::CAMERA,
            "ra" => Self::RA,
            "ea" => Self::EA,
            other => return Err(Error::config(format!("unknown sensor subset {other:?}; use all, camera, ra, ea or none"))),
        })
    }

    pub fn name(&self) -> String {
        match *self {
            Self::ALL => "all".into(),
            Self::NONE => "none".into(),
            Self::CAMERA => "camera".into(),
            Self::RA => "ra".into(),
            Self::EA => "ea".into(),
            m => format!("camera={} ra={} ea={}", m.camera, m.ra, m.ea),
        }
    }
}

/// Network inputs of one scene.
#[derive(Debug, Clone)]
pub struct ModelInput {
    /// `[3×H×W]`.
    pub image: Tensor,
    /// `[6×R×A]`.
    pub ra: Tensor,
    /// `[6×E×A]`.
    pub ea: Tensor,
}

impl ModelInput {
    pub fn from_scene(cube: &RadarCube, image: &Tensor) -> Result<Self> {
        Ok(ModelInput {
            image: image.clone(),
            ra: project(cube, View::RangeAzimuth)?.channels,
            ea: project(cube, View::ElevationAzimuth)?.channels,
        })
    }

    pub fn masked(&self, mask: StreamMask) -> Self {
        let keep = |on: bool, t: &Tensor| if on { t.clone() } else { Tensor::zeros(t.shape()) };
        ModelInput {
            image: keep(mask.camera, &self.image),
            ra: keep(mask.ra, &self.ra),
            ea: keep(mask.ea, &self.ea),
        }
    }
}

/// Everything one forward pass produces.
pub struct ModelOutput {
    pub iterations: Vec<IterationOutput>,
    pub references: ReferencePoints,
    pub gs_path: DeformOutput,
    pub ra_path: DeformOutput,
}

/// Pyramid traces of the three streams, for feature inspection.
pub struct StreamTraces {
    pub image: Vec<FpnLevel>,
    pub ra: Vec<FpnLevel>,
    pub ea: Vec<FpnLevel>,
}

pub struct Model {
    pub config: ModelConfig,
    pub image: Stream,
    pub ra: Stream,
    pub ea: Stream,
    pub gsa: Vec<Gsa>,
    pub ra_value: Vec<Conv2d>,
    pub queries: Parameter,
    pub anchor_embed: Linear,
    pub reference: ReferenceGenerator,
    pub gs_attn: DeformableAttention,
    pub ra_attn: DeformableAttention,
    pub fusion: PathFusion,
    pub head: DetectionHead,
    anchors: Vec<[f64; 2]>,
}

impl Model {
    pub fn new(config: ModelConfig, offset_scale: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        let init = &mut Init::new(seed);
        let stream = |init: &mut Init, name: &str, cin: usize, strides: &[(usize, usize)]| {
            Stream::new(
                init,
                name,
                &StreamConfig {
                    in_channels: cin,
                    widths: &config.backbone_widths,
                    strides,
                    fpn_widths: &config.fpn_widths,
                    use_wa_moe: config.use_wa_moe,
                    skip: config.fpn_skip,
                    moe: config.moe,
                },
            )
        };
        let image = stream(init, "image", 3, &config.image_strides)?;
        let ra = stream(init, "ra", 6, &config.ra_strides)?;
        let ea = stream(init, "ea", 6, &config.ea_strides)?;
        let d = config.dim;
        let levels = config.fpn_widths.len();
        let mut gsa = Vec::with_capacity(levels);
        let mut ra_value = Vec::with_capacity(levels);
        for (s, &w) in config.fpn_widths.iter().enumerate() {
            let cfg = GsaConfig {
                pooled: config.gsa_pooled,
                groups: config.gsa_groups,
                dilation: config.gsa_dilation,
                ..GsaConfig::new(w, w, d)
            };
            gsa.push(Gsa::new(init, &format!("gsa{s}"), cfg)?);
            ra_value.push(Conv2d::new(init, &format!("ra_value{s}"), w, d, 1, Conv2dOptions::default())?);
        }
        let coarse = *config.fpn_widths.last().expect("validated");
        let queries = init.normal("queries", &[config.num_queries, d], 1.0);
        let anchor_embed = Linear::new(init, "anchor_embed", 4 * ANCHOR_BANDS, d);
        let reference = ReferenceGenerator::new(init, "reference", d, coarse, coarse);
        reference.confidence.fill_parameters(0.0);
        let gs_attn = DeformableAttention::new(init, "gs_attn", d, levels, config.samples)?;
        let ra_attn = DeformableAttention::new(init, "ra_attn", d, levels, config.samples)?;
        let fusion = PathFusion::new(init, "fusion", d);
        let head = DetectionHead::new(
            init,
            "head",
            HeadConfig {
                iterations: config.iterations,
                ..HeadConfig::new(d, config.num_classes)
            },
            offset_scale,
        )?;
        let anchors = anchor_grid(config.num_queries)?;
        let model = Model {
            config,
            image,
            ra,
            ea,
            gsa,
            ra_value,
            queries,
            anchor_embed,
            reference,
            gs_attn,
            ra_attn,
            fusion,
            head,
            anchors,
        };
        model.check_unique_names()?;
        Ok(model)
    }

    /// The fixed grid anchors.
    pub fn grid_anchors(&self) -> &[[f64; 2]] {
        &self.anchors
    }

    /// Anchors used for `input` under the configured mode.
    pub fn anchors_for(&self, input: &ModelInput) -> Result<Vec<[f64; 2]>> {
        match self.config.anchors {
            AnchorMode::Grid => Ok(self.anchors.clone()),
            AnchorMode::RadarPeaks => {
                let (rows, cols) = (input.ra.dim(1), input.ra.dim(2));
                let amplitude = Tensor::from_vec(&[rows, cols], input.ra.data()[..rows * cols].to_vec());
                peak_anchors(&amplitude, self.config.num_queries, &self.anchors)
            }
        }
    }

    pub fn traces(&self, input: &ModelInput) -> Result<StreamTraces> {
        Ok(StreamTraces {
            image: self.image.trace(&input.image)?,
            ra: self.ra.trace(&input.ra)?,
            ea: self.ea.trace(&input.ea)?,
        })
    }

    pub fn forward(&self, input: &ModelInput) -> Result<ModelOutput> {
        let image = self.image.forward(&input.image)?;
        let ra = self.ra.forward(&input.ra)?;
        let ea = self.ea.forward(&input.ea)?;
        let d = self.config.dim;
        let mut gs_maps = Vec::with_capacity(ea.len());
        let mut ra_maps = Vec::with_capacity(ra.len());
        for s in 0..ea.len() {
            let (h, w) = (ea[s].dim(1), ea[s].dim(2));
            gs_maps.push(self.gsa[s].forward(&ea[s], &image[s])?.transpose()?.reshape(&[d, h, w])?);
            ra_maps.push(self.ra_value[s].forward(&ra[s])?);
        }
        let last = image.len() - 1;
        let anchors = self.anchors_for(input)?;
        let queries = self
            .queries
            .tensor()
            .add(&self.anchor_embed.forward(&anchor_features(&anchors, ANCHOR_BANDS))?)?;
        let references = self.reference.forward(&queries, &image[last], &ea[last], &anchors)?;
        let gs_path = self.gs_attn.forward(&references.queries, &references.points, &gs_maps)?;
        let ra_path = self.ra_attn.forward(&references.queries, &references.points, &ra_maps)?;
        let fused = references.queries.add(&self.fusion.forward(&gs_path.features, &ra_path.features)?)?;
        let iterations = self.head.forward(&fused, &references.points)?;
        Ok(ModelOutput {
            iterations,
            references,
            gs_path,
            ra_path,
        })
    }

    /// One detection per query from the final iteration.
    pub fn detections(&self, out: &ModelOutput, scene: usize, coder: &BoxCoder) -> Result<Vec<Detection>> {
        let last = out.iterations.last().expect("at least one iteration");
        let probs = last.logits.softmax(1)?;
        let c = self.config.num_classes;
        let k = c + 1;
        let nu = out.gs_path.uncertainty.dim(1);
        let mut dets = Vec::with_capacity(self.config.num_queries);
        for i in 0..self.config.num_queries {
            let p = &probs.data()[i * k..i * k + c];
            let class = (0..c).fold(0, |best, j| if p[j] > p[best] { j } else { best });
            let fg: f64 = p.iter().sum();
            let class_probs = p.iter().map(|v| if fg > 0.0 { v / fg } else { 1.0 / c as f64 }).collect();
            let mut u = out.gs_path.uncertainty.data()[i * nu..(i + 1) * nu].to_vec();
            u.extend_from_slice(&out.ra_path.uncertainty.data()[i * nu..(i + 1) * nu]);
            let confidence = out.references.confidence.data()[i];
            let uncertainty = u.iter().sum::<f64>() / u.len() as f64;
            let params = &last.boxes.data()[i * last.boxes.dim(1)..(i + 1) * last.boxes.dim(1)];
            dets.push(Detection {
                scene,
                class,
                class_probs,
                class_score: p[class],
                confidence,
                uncertainty,
                score: fuse_score(p[class], confidence, &u)?,
                bbox: coder.decode(params),
            });
        }
        Ok(dets)
    }
}

impl Module for Model {
    fn visit_parameters<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.image.visit_parameters(f);
        self.ra.visit_parameters(f);
        self.ea.visit_parameters(f);
        self.gsa.visit_parameters(f);
        self.ra_value.visit_parameters(f);
        f(&self.queries);
        self.anchor_embed.visit_parameters(f);
        self.reference.visit_parameters(f);
        self.gs_attn.visit_parameters(f);
        self.ra_attn.visit_parameters(f);
        self.fusion.visit_parameters(f);
        self.head.visit_parameters(f);
    }
}
