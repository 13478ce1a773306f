use super::grid_coords;
use crate::error::{Error, Result};
use crate::nn::{tokens, Conv2d, Init, Linear};
use crate::tensor::{Conv2dOptions, Module, Parameter, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GsaConfig {
    /// Channels of the elevation-azimuth features (query side).
    pub ea_channels: usize,
    /// Channels of the image features (key/value side).
    pub image_channels: usize,
    pub dim: usize,
    /// Pooled query grid `(rows, cols)`.
    pub pooled: (usize, usize),
    pub groups: usize,
    pub dilation: usize,
}

impl GsaConfig {
    pub fn new(ea_channels: usize, image_channels: usize, dim: usize) -> Self {
        GsaConfig {
            ea_channels,
            image_channels,
            dim,
            pooled: (4, 4),
            groups: 4,
            dilation: 2,
        }
    }

    pub fn pooled_len(&self) -> usize {
        self.pooled.0 * self.pooled.1
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.pooled.0 == 0 || self.pooled.1 == 0 || self.dilation == 0 {
            return Err(Error::config("gsa dim, pooled grid and dilation must be positive"));
        }
        for c in [self.ea_channels, self.image_channels, self.dim] {
            if self.groups == 0 || c % self.groups != 0 {
                return Err(Error::config(format!(
                    "gsa channel count {c} is not divisible by {} groups",
                    self.groups
                )));
            }
        }
        Ok(())
    }
}

/// Multiply-accumulates of the two sigmoid attention stages for `n_query`
/// queries pooled to `pooled` rows against `keys` keys of width `dim`.
pub fn gsa_op_count(n_query: usize, pooled: usize, keys: usize, dim: usize) -> u64 {
    2 * dim as u64 * (pooled as u64 * keys as u64 + n_query as u64 * pooled as u64)
}

/// Cost of one dense sigmoid attention of every query against every key.
pub fn dense_attention_op_count(n_query: usize, keys: usize, dim: usize) -> u64 {
    2 * dim as u64 * n_query as u64 * keys as u64
}

/// Two-step sigmoid attention through a pooled query set.
///
/// `q: [N×d]`, `pooled: [n×d]`, `k, v: [M×d]`, `bias` a one-element tensor.
pub fn pooled_sigmoid_attention(q: &Tensor, pooled: &Tensor, k: &Tensor, v: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = q.dim(1);
    let scale = 1.0 / (d as f64).sqrt();
    let summary = pooled.matmul(&k.transpose()?)?.mul_scalar(scale).add(bias)?.sigmoid().matmul(v)?;
    q.matmul(&pooled.transpose()?)?.mul_scalar(scale).add(bias)?.sigmoid().matmul(&summary)
}

/// Camera/elevation alignment: queries from EA features, keys and values
/// from image features, routed through a max-pooled query summary.
pub struct Gsa {
    pub config: GsaConfig,
    pub query_conv: Conv2d,
    pub key_conv: Conv2d,
    pub value_conv: Conv2d,
    pub query_pos: Linear,
    pub key_pos: Linear,
    pub value_pos: Linear,
    /// Shared additive attention bias.
    pub bias: Parameter,
}

impl Gsa {
    pub fn new(init: &mut Init, name: &str, config: GsaConfig) -> Result<Self> {
        config.validate()?;
        let gdc = Conv2dOptions::default()
            .with_groups(config.groups)
            .with_dilation(config.dilation)
            .with_padding(config.dilation, config.dilation);
        let d = config.dim;
        init.scoped(name, |init| {
            Ok(Gsa {
                config,
                query_conv: Conv2d::new(init, "query_conv", config.ea_channels, d, 3, gdc)?,
                key_conv: Conv2d::new(init, "key_conv", config.image_channels, d, 3, gdc)?,
                value_conv: Conv2d::new(init, "value_conv", config.image_channels, d, 3, gdc)?,
                query_pos: Linear::new(init, "query_pos", 2, d),
                key_pos: Linear::new(init, "key_pos", 2, d),
                value_pos: Linear::new(init, "value_pos", 2, d),
                bias: init.constant("bias", &[1], -(config.pooled_len() as f64).ln()),
            })
        })
    }

    fn embed(conv: &Conv2d, pos: &Linear, x: &Tensor) -> Result<Tensor> {
        let pe = pos.forward(&grid_coords(x.dim(1), x.dim(2)))?;
        tokens(&conv.forward(x)?)?.add(&pe)
    }

    /// `[C_ea×H×W]`, `[C_img×H'×W'] → [HW×d]`.
    pub fn forward(&self, ea: &Tensor, image: &Tensor) -> Result<Tensor> {
        let cfg = &self.config;
        if ea.rank() != 3 || image.rank() != 3 || ea.dim(0) != cfg.ea_channels || image.dim(0) != cfg.image_channels {
            return Err(Error::dim(format!(
                "gsa expects [{}, H, W] and [{}, H, W], got {:?} and {:?}",
                cfg.ea_channels,
                cfg.image_channels,
                ea.shape(),
                image.shape()
            )));
        }
        let (h, w) = (ea.dim(1), ea.dim(2));
        let n_query = h * w;
        if cfg.pooled_len() >= n_query {
            return Err(Error::config(format!(
                "pooled grid {}x{} is not smaller than the {h}x{w} query grid",
                cfg.pooled.0, cfg.pooled.1
            )));
        }
        let [q, pooled, k, v] = self.embeddings(ea, image)?;
        pooled_sigmoid_attention(&q, &pooled, &k, &v, &self.bias.tensor())
    }

    /// Queries, pooled queries, keys and values fed to the attention.
    pub fn embeddings(&self, ea: &Tensor, image: &Tensor) -> Result<[Tensor; 4]> {
        let cfg = &self.config;
        let (h, w) = (ea.dim(1), ea.dim(2));
        let q = Self::embed(&self.query_conv, &self.query_pos, ea)?;
        let q_grid = q.transpose()?.reshape(&[cfg.dim, h, w])?;
        let pooled = tokens(&q_grid.adaptive_max_pool2d(cfg.pooled.0, cfg.pooled.1)?)?;
        let k = Self::embed(&self.key_conv, &self.key_pos, image)?;
        let v = Self::embed(&self.value_conv, &self.value_pos, image)?;
        Ok([q, pooled, k, v])
    }
}

impl Module for Gsa {
    fn visit_parameters<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.query_conv.visit_parameters(f);
        self.key_conv.visit_parameters(f);
        self.value_conv.visit_parameters(f);
        self.query_pos.visit_parameters(f);
        self.key_pos.visit_parameters(f);
        self.value_pos.visit_parameters(f);
        f(&self.bias);
    }
}
