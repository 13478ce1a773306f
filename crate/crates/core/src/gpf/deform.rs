use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::nn::{Init, Linear};
use crate::tensor::{Module, Parameter, Tensor};

/// Radius of the initial sampling ring at the finest level, in normalized
/// map units. Coarser levels use proportionally wider rings.
const RING_RADIUS: f64 = 0.04;

/// Per-query outputs of one deformable attention path.
#[derive(Debug, Clone)]
pub struct DeformOutput {
    /// `[Nq×d]`.
    pub features: Tensor,
    /// `[Nq×S·K]` sampling uncertainties in `(0,1)`.
    pub uncertainty: Tensor,
    /// `[Nq×S·K]` attention weights, each row summing to one.
    pub weights: Tensor,
    /// `[Nq×S·K×2]` absolute sample locations, level-major.
    pub locations: Tensor,
}

/// Multi-level deformable sampling around reference points with a learned
/// per-sample uncertainty gate.
pub struct DeformableAttention {
    pub levels: usize,
    pub samples: usize,
    pub offset: Linear,
    pub weight: Linear,
    pub uncertainty: Linear,
}

impl DeformableAttention {
    pub fn new(init: &mut Init, name: &str, dim: usize, levels: usize, samples: usize) -> Result<Self> {
        if levels == 0 || samples == 0 {
            return Err(Error::config(format!(
                "deformable attention needs at least one level and sample, got {levels} and {samples}"
            )));
        }
        let n = levels * samples;
        init.scoped(name, |init| {
            let offset = Linear::zeroed(init, "offset", dim, 2 * n);
            let mut ring = Vec::with_capacity(2 * n);
            for s in 0..levels {
                let r = RING_RADIUS * (1 << s) as f64;
                for k in 0..samples {
                    let a = TAU * k as f64 / samples as f64;
                    ring.extend([r * a.cos(), r * a.sin()]);
                }
            }
            offset.bias.set_data(ring)?;
            Ok(DeformableAttention {
                levels,
                samples,
                offset,
                weight: Linear::zeroed(init, "weight", dim, n),
                uncertainty: Linear::new(init, "uncertainty", dim, n),
            })
        })
    }

    /// `queries: [Nq×d]`, `points: [Nq×2]`, `pyramid[s]: [d×H_s×W_s]`.
    pub fn forward(&self, queries: &Tensor, points: &Tensor, pyramid: &[Tensor]) -> Result<DeformOutput> {
        if pyramid.is_empty() {
            return Err(Error::config("deformable attention over an empty pyramid"));
        }
        if pyramid.len() != self.levels {
            return Err(Error::config(format!(
                "deformable attention built for {} levels, got {}",
                self.levels,
                pyramid.len()
            )));
        }
        let nq = queries.dim(0);
        let (s_n, k_n) = (self.levels, self.samples);
        let offsets = self.offset.forward(queries)?.reshape(&[nq, s_n * k_n, 2])?;
        let locations = offsets.add(&points.reshape(&[nq, 1, 2])?)?;
        let weights = self.weight.forward(queries)?.softmax(1)?;
        let uncertainty = self.uncertainty.forward(queries)?.sigmoid();
        let coeff = weights.mul(&uncertainty)?;
        let mut features: Option<Tensor> = None;
        for (s, map) in pyramid.iter().enumerate() {
            let d = map.dim(0);
            let pts = locations.narrow(1, s * k_n, k_n)?.reshape(&[nq * k_n, 2])?;
            let sampled = map.bilinear_sample(&pts)?;
            let c = coeff.narrow(1, s * k_n, k_n)?.reshape(&[nq * k_n, 1])?;
            let level = sampled.mul(&c)?.reshape(&[nq, k_n, d])?.sum_axis(1)?;
            features = Some(match features {
                Some(acc) => acc.add(&level)?,
                None => level,
            });
        }
        Ok(DeformOutput {
            features: features.expect("non-empty pyramid"),
            uncertainty,
            weights,
            locations,
        })
    }
}

impl Module for DeformableAttention {
    fn visit_parameters<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.offset.visit_parameters(f);
        self.weight.visit_parameters(f);
        self.uncertainty.visit_parameters(f);
    }
}

/// Joins the two path features with one fully connected layer.
pub struct PathFusion {
    pub proj: Linear,
}

impl PathFusion {
    pub fn new(init: &mut Init, name: &str, dim: usize) -> Self {
        PathFusion {
            proj: Linear::new(init, name, 2 * dim, dim),
        }
    }

    pub fn forward(&self, gs: &Tensor, ra: &Tensor) -> Result<Tensor> {
        if gs.shape() != ra.shape() {
            return Err(Error::dim(format!(
                "fused paths differ in shape: {:?} vs {:?}",
                gs.shape(),
                ra.shape()
            )));
        }
        self.proj.forward(&Tensor::concat(&[gs.clone(), ra.clone()], 1)?)
    }
}

impl Module for PathFusion {
    fn visit_parameters<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.proj.visit_parameters(f);
    }
}
