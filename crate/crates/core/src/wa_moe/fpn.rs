use super::{WaMoe, WaMoeConfig};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Init};
use crate::tensor::{Conv2dOptions, Module, Parameter, Tensor};

/// Routing settings shared by every block of a pyramid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoeOptions {
    pub num_experts: usize,
    pub top_k: usize,
    /// Expert hidden width as a multiple of the level width.
    pub hidden_mult: usize,
    pub temperature: f64,
}

impl Default for MoeOptions {
    fn default() -> Self {
        MoeOptions {
            num_experts: 4,
            top_k: 2,
            hidden_mult: 1,
            temperature: 1.0,
        }
    }
}

impl MoeOptions {
    pub fn for_channels(&self, channels: usize) -> WaMoeConfig {
        WaMoeConfig {
            channels,
            num_experts: self.num_experts,
            top_k: self.top_k,
            hidden: self.hidden_mult * channels,
            temperature: self.temperature,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpnConfig {
    /// Backbone channels per level, fine to coarse.
    pub in_channels: Vec<usize>,
    /// Output width per level.
    pub widths: Vec<usize>,
    /// Replace each block by the identity when false.
    pub use_wa_moe: bool,
    /// Add the lateral projection to each block output.
    pub skip: bool,
    pub moe: MoeOptions,
}

impl FpnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels.is_empty() || self.in_channels.len() != self.widths.len() {
            return Err(Error::config(format!(
                "fpn needs matching, non-empty level lists, got {} inputs and {} widths",
                self.in_channels.len(),
                self.widths.len()
            )));
        }
        if self.widths.iter().chain(&self.in_channels).any(|&w| w == 0) {
            return Err(Error::config("fpn widths must be positive"));
        }
        Ok(())
    }
}

/// Per-level output plus the block input and output, kept for inspection.
pub struct FpnLevel {
    pub merged: Tensor,
    /// Block output before the skip connection.
    pub block_out: Tensor,
    pub output: Tensor,
}

/// Lateral projections, a nearest-neighbour top-down path and one block per
/// level.
pub struct Fpn {
    pub config: FpnConfig,
    pub laterals: Vec<Conv2d>,
    /// `adapters[s]` maps level `s+1` width to level `s` width when they differ.
    pub adapters: Vec<Option<Conv2d>>,
    pub blocks: Vec<Option<WaMoe>>,
}

impl Fpn {
    pub fn new(init: &mut Init, name: &str, config: FpnConfig) -> Result<Self> {
        config.validate()?;
        init.scoped(name, |init| {
            let s = config.widths.len();
            let mut laterals = Vec::with_capacity(s);
            let mut adapters = Vec::with_capacity(s);
            let mut blocks = Vec::with_capacity(s);
            for level in 0..s {
                let w = config.widths[level];
                laterals.push(Conv2d::new(
                    init,
                    &format!("lateral{level}"),
                    config.in_channels[level],
                    w,
                    1,
                    Conv2dOptions::default(),
                )?);
                adapters.push(if level + 1 < s && config.widths[level + 1] != w {
                    Some(Conv2d::new(
                        init,
                        &format!("adapter{level}"),
                        config.widths[level + 1],
                        w,
                        1,
                        Conv2dOptions::default(),
                    )?)
                } else {
                    None
                });
                blocks.push(if config.use_wa_moe {
                    Some(WaMoe::new(init, &format!("block{level}"), config.moe.for_channels(w))?)
                } else {
                    None
                });
            }
            Ok(Fpn {
                config,
                laterals,
                adapters,
                blocks,
            })
        })
    }

    pub fn forward(&self, levels: &[Tensor]) -> Result<Vec<Tensor>> {
        Ok(self.trace(levels)?.into_iter().map(|l| l.output).collect())
    }

    pub fn trace(&self, levels: &[Tensor]) -> Result<Vec<FpnLevel>> {
        let s = self.laterals.len();
        if levels.len() != s {
            return Err(Error::config(format!("fpn built for {s} levels, got {}", levels.len())));
        }
        for (i, pair) in levels.windows(2).enumerate() {
            let (a, b) = (pair[0].shape(), pair[1].shape());
            let halves = |fine: usize, coarse: usize| fine.div_ceil(2) == coarse;
            if a.len() != 3 || b.len() != 3 || !halves(a[1], b[1]) || !halves(a[2], b[2]) {
                return Err(Error::config(format!(
                    "fpn levels {i} {a:?} and {} {b:?} do not halve spatially",
                    i + 1
                )));
            }
        }
        let laterals = self
            .laterals
            .iter()
            .zip(levels)
            .map(|(conv, x)| conv.forward(x))
            .collect::<Result<Vec<_>>>()?;
        let mut merged: Vec<Option<Tensor>> = vec![None; s];
        merged[s - 1] = Some(laterals[s - 1].clone());
        for level in (0..s - 1).rev() {
            let coarse = merged[level + 1].as_ref().expect("filled top-down");
            let (h, w) = (laterals[level].dim(1), laterals[level].dim(2));
            let mut up = coarse.upsample_nearest(2, h, w)?;
            if let Some(adapter) = &self.adapters[level] {
                up = adapter.forward(&up)?;
            }
            merged[level] = Some(laterals[level].add(&up)?);
        }
        let mut out = Vec::with_capacity(s);
        for (level, m) in merged.into_iter().enumerate() {
            let m = m.expect("filled top-down");
            let block_out = match &self.blocks[level] {
                Some(block) => block.forward(&m)?,
                None => m.clone(),
            };
            let output = if self.config.skip {
                block_out.add(&laterals[level])?
            } else {
                block_out.clone()
            };
            out.push(FpnLevel { merged: m, block_out, output });
        }
        Ok(out)
    }
}

impl Module for Fpn {
    fn visit_parameters<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.laterals.visit_parameters(f);
        for a in self.adapters.iter().flatten() {
            a.visit_parameters(f);
        }
        for b in self.blocks.iter().flatten() {
            b.visit_parameters(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, GradCheckOptions};
    use rand::{Rng, SeedableRng};

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(shape, (0..shape.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn config(inputs: Vec<usize>, widths: Vec<usize>, moe: bool) -> FpnConfig {
        FpnConfig {
            in_channels: inputs,
            widths,
            use_wa_moe: moe,
            skip: true,
            moe: MoeOptions::default(),
        }
    }

    #[test]
    fn single_level_is_lateral_plus_block() {
        let fpn = Fpn::new(&mut Init::new(0), "fpn", config(vec![3], vec![4], true)).unwrap();
        let x = random(&[3, 6, 6], 1);
        let out = fpn.forward(std::slice::from_ref(&x)).unwrap();
        assert_eq!(out.len(), 1);
        let lat = fpn.laterals[0].forward(&x).unwrap();
        // identity-initialized block: output = lateral + lateral
        let want = lat.add(&lat).unwrap();
        assert_eq!(out[0].data(), want.data());
    }

    #[test]
    fn level_count_and_shapes() {
        let fpn = Fpn::new(&mut Init::new(0), "fpn", config(vec![3, 5, 7], vec![4, 4, 8], true)).unwrap();
        let out = fpn
            .forward(&[random(&[3, 32, 24], 1), random(&[5, 16, 12], 2), random(&[7, 8, 6], 3)])
            .unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[2].shape(), &[8, 8, 6]);
        assert_eq!(out[0].shape(), &[4, 32, 24]);
    }

    #[test]
    fn top_down_copies_coarsest_projection() {
        let mut cfg = config(vec![2, 2, 2], vec![3, 3, 3], false);
        cfg.skip = true;
        let fpn = Fpn::new(&mut Init::new(5), "fpn", cfg).unwrap();
        for l in &fpn.laterals[..2] {
            l.fill_parameters(0.0);
        }
        let levels = [random(&[2, 8, 8], 1), random(&[2, 4, 4], 2), random(&[2, 2, 2], 3)];
        let out = fpn.forward(&levels).unwrap();
        let top = fpn.laterals[2].forward(&levels[2]).unwrap();
        assert_eq!(out[1].data(), top.upsample_nearest(2, 4, 4).unwrap().data());
        assert_eq!(out[0].data(), top.upsample_nearest(4, 8, 8).unwrap().data());
    }

    #[test]
    fn non_halving_chain_rejected() {
        let fpn = Fpn::new(&mut Init::new(0), "fpn", config(vec![2, 2], vec![4, 4], false)).unwrap();
        let r = fpn.forward(&[random(&[2, 8, 8], 1), random(&[2, 8, 8], 2)]);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn gradient_through_two_level_pyramid() {
        let mut cfg = config(vec![2, 3], vec![1, 2], true);
        cfg.moe.hidden_mult = 2;
        let fpn = Fpn::new(&mut Init::new(2), "fpn", cfg).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        fpn.visit_parameters(&mut |p| {
            p.set_data((0..p.numel()).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
        });
        let params = fpn.parameters();
        let opts = GradCheckOptions { max_coords: 8, ..Default::default() };
        let r = check_gradients(
            &[random(&[2, 8, 8], 1), random(&[3, 4, 4], 2)],
            &params,
            |xs| {
                let out = fpn.forward(xs)?;
                Tensor::concat(&[out[0].reshape(&[64])?, out[1].reshape(&[32])?], 0)
            },
            &opts,
        )
        .unwrap();
        assert!(r.worst() < 1e-6, "{:?}", r.worst_entry());
    }
}
