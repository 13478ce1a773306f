use crate::error::{Error, Result};
use crate::nn::{Conv2d, Init};
use crate::tensor::{Conv2dOptions, Module, Parameter, Tensor};
use crate::wa_moe::{Fpn, FpnConfig, FpnLevel, MoeOptions};

/// Strided 3×3 conv + SiLU stages.
pub struct Backbone {
    pub stages: Vec<Conv2d>,
}

impl Backbone {
    pub fn new(init: &mut Init, name: &str, in_channels: usize, widths: &[usize], strides: &[(usize, usize)]) -> Result<Self> {
        if widths.len() != strides.len() || widths.is_empty() {
            return Err(Error::config(format!(
                "backbone {name} has {} widths but {} strides",
                widths.len(),
                strides.len()
            )));
        }
        init.scoped(name, |init| {
            let mut stages = Vec::with_capacity(widths.len());
            let mut cin = in_channels;
            for (i, (&w, &(sh, sw))) in widths.iter().zip(strides).enumerate() {
                let opts = Conv2dOptions::same(3).with_stride(sh, sw);
                stages.push(Conv2d::new(init, &format!("stage{i}"), cin, w, 3, opts)?);
                cin = w;
            }
            Ok(Backbone { stages })
        })
    }

    /// Output of every stage, fine to coarse.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut h = x.clone();
        let mut out = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            h = stage.forward(&h)?.silu();
            out.push(h.clone());
        }
        Ok(out)
    }
}

impl Module for Backbone {
    fn visit_parameters<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.stages.visit_parameters(f);
    }
}

/// Backbone plus pyramid over its last `fpn_widths.len()` stages.
pub struct Stream {
    pub backbone: Backbone,
    pub fpn: Fpn,
}

pub struct StreamConfig<'a> {
    pub in_channels: usize,
    pub widths: &'a [usize],
    pub strides: &'a [(usize, usize)],
    pub fpn_widths: &'a [usize],
    pub use_wa_moe: bool,
    pub skip: bool,
    pub moe: MoeOptions,
}

impl Stream {
    pub fn new(init: &mut Init, name: &str, cfg: &StreamConfig) -> Result<Self> {
        let levels = cfg.fpn_widths.len();
        if levels > cfg.widths.len() {
            return Err(Error::config(format!(
                "stream {name}: {levels} pyramid levels from {} backbone stages",
                cfg.widths.len()
            )));
        }
        init.scoped(name, |init| {
            let backbone = Backbone::new(init, "backbone", cfg.in_channels, cfg.widths, cfg.strides)?;
            let fpn = Fpn::new(
                init,
                "fpn",
                FpnConfig {
                    in_channels: cfg.widths[cfg.widths.len() - levels..].to_vec(),
                    widths: cfg.fpn_widths.to_vec(),
                    use_wa_moe: cfg.use_wa_moe,
                    skip: cfg.skip,
                    moe: cfg.moe,
                },
            )?;
            Ok(Stream { backbone, fpn })
        })
    }

    pub fn trace(&self, x: &Tensor) -> Result<Vec<FpnLevel>> {
        let stages = self.backbone.forward(x)?;
        let levels = self.fpn.laterals.len();
        self.fpn.trace(&stages[stages.len() - levels..])
    }

    pub fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        Ok(self.trace(x)?.into_iter().map(|l| l.output).collect())
    }
}

impl Module for Stream {
    fn visit_parameters<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.backbone.visit_parameters(f);
        self.fpn.visit_parameters(f);
    }
}
