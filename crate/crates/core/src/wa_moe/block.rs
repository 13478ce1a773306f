use super::gate::{top_k_softmax, GateOutput};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Init};
use crate::tensor::{Conv2dOptions, Module, Parameter, Tensor};
use crate::wavelet::{dwt2_stacked, iwt2_stacked};

/// Shape of one wavelet mixture-of-experts block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaMoeConfig {
    /// Input channels `C`; the block works on `4C` band channels.
    pub channels: usize,
    pub num_experts: usize,
    pub top_k: usize,
    /// Hidden width of each expert's pointwise stage.
    pub hidden: usize,
    pub temperature: f64,
}

impl WaMoeConfig {
    pub fn new(channels: usize) -> Self {
        WaMoeConfig {
            channels,
            num_experts: 4,
            top_k: 2,
            hidden: channels,
            temperature: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.hidden == 0 {
            return Err(Error::config("wa-moe channels and hidden width must be positive"));
        }
        if self.top_k == 0 || self.top_k > self.num_experts {
            return Err(Error::config(format!(
                "top_k {} must lie in 1..={} experts",
                self.top_k, self.num_experts
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(format!("gate temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }

    /// Closed-form parameter count of [`WaMoe`].
    pub fn parameter_count(&self) -> usize {
        let b = 4 * self.channels;
        let (ne, hid) = (self.num_experts, self.hidden);
        let branch1 = b * (b / 4) * 9 + b;
        let branch2 = 4 * b * (4 * b / 16) * 9 + 4 * b;
        let gate = b * ne + ne;
        let expert = (b * 9 + b) + (b * hid + hid) + (hid * b + b);
        branch1 + branch2 + gate + ne * expert
    }
}

/// Depthwise 3×3 followed by a pointwise bottleneck with SiLU.
pub struct Expert {
    pub depthwise: Conv2d,
    pub expand: Conv2d,
    pub project: Conv2d,
}

impl Expert {
    pub fn new(init: &mut Init, name: &str, channels: usize, hidden: usize) -> Result<Self> {
        init.scoped(name, |init| {
            Ok(Expert {
                depthwise: Conv2d::new(init, "depthwise", channels, channels, 3, Conv2dOptions::same(3).with_groups(channels))?,
                expand: Conv2d::new(init, "expand", channels, hidden, 1, Conv2dOptions::default())?,
                project: Conv2d::zeroed(init, "project", hidden, channels, 1, Conv2dOptions::default())?,
            })
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.depthwise.forward(x)?;
        let h = self.expand.forward(&h)?.silu();
        self.project.forward(&h)
    }
}

impl Module for Expert {
    fn visit_parameters<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.depthwise.visit_parameters(f);
        self.expand.visit_parameters(f);
        self.project.visit_parameters(f);
    }
}

/// Intermediate tensors of one block evaluation.
pub struct WaMoeTrace {
    pub output: Tensor,
    pub fused: Tensor,
    pub gate: GateOutput,
}

/// Wavelet-domain encoding, a two-level wavelet branch, sparse expert
/// routing, inverse transform and a residual connection.
pub struct WaMoe {
    pub config: WaMoeConfig,
    pub band_conv: Conv2d,
    pub second_order_conv: Conv2d,
    pub gate: Conv2d,
    pub experts: Vec<Expert>,
}

impl WaMoe {
    pub fn new(init: &mut Init, name: &str, config: WaMoeConfig) -> Result<Self> {
        config.validate()?;
        let b = 4 * config.channels;
        init.scoped(name, |init| {
            let experts = (0..config.num_experts)
                .map(|e| Expert::new(init, &format!("expert{e}"), b, config.hidden))
                .collect::<Result<Vec<_>>>()?;
            Ok(WaMoe {
                config,
                band_conv: Conv2d::new(init, "band_conv", b, b, 3, Conv2dOptions::same(3).with_groups(4))?,
                second_order_conv: Conv2d::new(
                    init,
                    "second_order_conv",
                    4 * b,
                    4 * b,
                    3,
                    Conv2dOptions::same(3).with_groups(16),
                )?,
                gate: Conv2d::new(init, "gate", b, config.num_experts, 1, Conv2dOptions::default())?,
                experts,
            })
        })
    }

    /// Runs expert `index` on band features.
    pub fn expert_forward(&self, f: &Tensor, index: usize) -> Result<Tensor> {
        self.experts
            .get(index)
            .ok_or_else(|| Error::config(format!("expert index {index} out of range for {} experts", self.experts.len())))?
            .forward(f)
    }

    /// Routing weights for fused band features.
    pub fn route(&self, fused: &Tensor) -> Result<GateOutput> {
        let logits = self.gate.forward(fused)?.mul_scalar(1.0 / self.config.temperature);
        top_k_softmax(&logits, self.config.top_k)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.trace(x)?.output)
    }

    pub fn trace(&self, x: &Tensor) -> Result<WaMoeTrace> {
        if x.rank() != 3 || x.dim(0) != self.config.channels {
            return Err(Error::dim(format!(
                "wa-moe block expects [{}, H, W], got {:?}",
                self.config.channels,
                x.shape()
            )));
        }
        let (h, w) = (x.dim(1), x.dim(2));
        if h < 4 || w < 4 {
            return Err(Error::dim(format!("wa-moe block needs H, W >= 4, got {h}x{w}")));
        }
        let bands = dwt2_stacked(x)?;
        let band_size = (bands.dim(1), bands.dim(2));
        let first = self.band_conv.forward(&bands)?;
        let second = dwt2_stacked(&bands)?;
        let second = iwt2_stacked(&self.second_order_conv.forward(&second)?, band_size)?;
        let fused = first.add(&second)?;

        let gate = self.route(&fused)?;
        let mut mixed: Option<Tensor> = None;
        for (e, expert) in self.experts.iter().enumerate() {
            let weight = gate.weights.narrow(0, e, 1)?;
            let term = expert.forward(&fused)?.mul(&weight)?;
            mixed = Some(match mixed {
                Some(acc) => acc.add(&term)?,
                None => term,
            });
        }
        let mixed = mixed.ok_or_else(|| Error::config("wa-moe block has no experts"))?;
        let output = iwt2_stacked(&mixed, (h, w))?.add(x)?;
        Ok(WaMoeTrace { output, fused, gate })
    }
}

impl Module for WaMoe {
    fn visit_parameters<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.band_conv.visit_parameters(f);
        self.second_order_conv.visit_parameters(f);
        self.gate.visit_parameters(f);
        self.experts.visit_parameters(f);
    }
}
