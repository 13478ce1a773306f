use super::coder::BOX_PARAMS;
use crate::error::{Error, Result};
use crate::nn::{Init, LayerNorm, Linear};
use crate::tensor::{Module, Parameter, Tensor};

/// Two-layer perceptron with SiLU.
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(init: &mut Init, name: &str, inp: usize, hidden: usize, out: usize) -> Self {
        init.scoped(name, |init| Mlp {
            fc1: Linear::new(init, "fc1", inp, hidden),
            fc2: Linear::new(init, "fc2", hidden, out),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.silu())
    }
}

impl Module for Mlp {
    fn visit_parameters<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.fc1.visit_parameters(f);
        self.fc2.visit_parameters(f);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadConfig {
    pub dim: usize,
    pub num_classes: usize,
    pub iterations: usize,
    /// Initial foreground probability per class.
    pub prior: f64,
}

impl HeadConfig {
    pub fn new(dim: usize, num_classes: usize) -> Self {
        HeadConfig {
            dim,
            num_classes,
            iterations: 3,
            prior: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("detection head needs at least one iteration"));
        }
        if self.num_classes == 0 || self.dim == 0 {
            return Err(Error::config("detection head needs positive width and class count"));
        }
        if !(self.prior > 0.0 && self.prior < 1.0) {
            return Err(Error::config(format!("class prior {} must lie in (0, 1)", self.prior)));
        }
        Ok(())
    }
}

/// Predictions of one refinement iteration.
#[derive(Debug, Clone)]
pub struct IterationOutput {
    /// `[Nq×(C+1)]`, background last.
    pub logits: Tensor,
    /// `[Nq×8]` in the normalized box space, reference point included.
    pub boxes: Tensor,
}

/// Shared class and box predictors applied after each residual refinement.
pub struct DetectionHead {
    pub config: HeadConfig,
    pub norms: Vec<LayerNorm>,
    pub refine: Vec<Mlp>,
    pub classifier: Linear,
    pub regressor: Mlp,
    offset_scale: f64,
}

impl DetectionHead {
    pub fn new(init: &mut Init, name: &str, config: HeadConfig, offset_scale: f64) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        init.scoped(name, |init| {
            let norms = (0..config.iterations).map(|t| LayerNorm::new(init, &format!("norm{t}"), d)).collect();
            let refine = (0..config.iterations).map(|t| Mlp::new(init, &format!("refine{t}"), d, 2 * d, d)).collect();
            let classifier = Linear::new(init, "classifier", d, config.num_classes + 1);
            let mut bias = vec![0.0; config.num_classes + 1];
            bias[config.num_classes] = (config.num_classes as f64 * (1.0 - config.prior) / config.prior).ln();
            classifier.bias.set_data(bias)?;
            let regressor = Mlp::new(init, "regressor", d, d, BOX_PARAMS);
            regressor.fc2.fill_parameters(0.0);
            Ok(DetectionHead {
                config,
                norms,
                refine,
                classifier,
                regressor,
                offset_scale,
            })
        })
    }

    /// `queries: [Nq×d]`, `points: [Nq×2]` reference points.
    pub fn forward(&self, queries: &Tensor, points: &Tensor) -> Result<Vec<IterationOutput>> {
        let nq = queries.dim(0);
        let origin = Tensor::concat(
            &[points.mul_scalar(self.offset_scale), Tensor::zeros(&[nq, BOX_PARAMS - 2])],
            1,
        )?;
        let mut q = queries.clone();
        let mut out = Vec::with_capacity(self.config.iterations);
        for (norm, ffn) in self.norms.iter().zip(&self.refine) {
            q = q.add(&ffn.forward(&norm.forward(&q)?)?)?;
            out.push(IterationOutput {
                logits: self.classifier.forward(&q)?,
                boxes: self.regressor.forward(&q)?.add(&origin)?,
            });
        }
        Ok(out)
    }
}

impl Module for DetectionHead {
    fn visit_parameters<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.norms.visit_parameters(f);
        self.refine.visit_parameters(f);
        self.classifier.visit_parameters(f);
        self.regressor.visit_parameters(f);
    }
}

/// `ŷ · c · mean(u)`.
pub fn fuse_score(class_score: f64, confidence: f64, uncertainties: &[f64]) -> Result<f64> {
    if uncertainties.is_empty() {
        return Err(Error::contract("score fusion needs at least one uncertainty"));
    }
    let mean = uncertainties.iter().sum::<f64>() / uncertainties.len() as f64;
    Ok(class_score * confidence * mean)
}
