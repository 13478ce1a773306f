//! Small learnable layers and a seeded initializer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Conv2dOptions, Module, Parameter, Tensor};

/// Deterministic parameter factory; names are prefixed with the current scope.
pub struct Init {
    rng: ChaCha8Rng,
    scope: Vec<String>,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            scope: Vec::new(),
        }
    }

    /// Runs `f` with `name` pushed onto the naming scope.
    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut Init) -> T) -> T {
        self.scope.push(name.to_string());
        let out = f(self);
        self.scope.pop();
        out
    }

    pub fn path(&self, name: &str) -> String {
        let mut parts = self.scope.clone();
        parts.push(name.to_string());
        parts.join(".")
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Parameter {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        Parameter::new(self.path(name), shape, data)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Parameter {
        let n = shape.iter().product();
        let dist = rand_distr::Normal::new(0.0, std).expect("finite std");
        let data = (0..n).map(|_| self.rng.sample(dist)).collect();
        Parameter::new(self.path(name), shape, data)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Parameter {
        Parameter::new(self.path(name), shape, vec![value; shape.iter().product()])
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Parameter {
        self.constant(name, shape, 0.0)
    }
}

/// Fully connected layer on row vectors: `[N×in] → [N×out]`.
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, inp: usize, out: usize) -> Self {
        init.scoped(name, |init| Linear {
            weight: init.uniform("weight", &[inp, out], 1.0 / (inp as f64).sqrt()),
            bias: init.zeros("bias", &[out]),
        })
    }

    pub fn zeroed(init: &mut Init, name: &str, inp: usize, out: usize) -> Self {
        init.scoped(name, |init| Linear {
            weight: init.zeros("weight", &[inp, out]),
            bias: init.zeros("bias", &[out]),
        })
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.dim(1) != self.in_features() {
            return Err(Error::dim(format!(
                "linear {} expects [N, {}], got {:?}",
                self.weight.name(),
                self.in_features(),
                x.shape()
            )));
        }
        x.matmul(&self.weight.tensor())?.add(&self.bias.tensor())
    }
}

impl Module for Linear {
    fn visit_parameters<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        f(&self.weight);
        f(&self.bias);
    }
}

/// 2D convolution layer with bias.
pub struct Conv2d {
    pub weight: Parameter,
    pub bias: Parameter,
    pub opts: Conv2dOptions,
}

impl Conv2d {
    pub fn new(init: &mut Init, name: &str, inp: usize, out: usize, kernel: usize, opts: Conv2dOptions) -> Result<Self> {
        Self::build(init, name, inp, out, kernel, opts, false)
    }

    pub fn zeroed(init: &mut Init, name: &str, inp: usize, out: usize, kernel: usize, opts: Conv2dOptions) -> Result<Self> {
        Self::build(init, name, inp, out, kernel, opts, true)
    }

    fn build(
        init: &mut Init,
        name: &str,
        inp: usize,
        out: usize,
        kernel: usize,
        opts: Conv2dOptions,
        zero: bool,
    ) -> Result<Self> {
        let g = opts.groups;
        if g == 0 || !inp.is_multiple_of(g) || !out.is_multiple_of(g) {
            return Err(Error::config(format!(
                "conv {name}: {inp} input and {out} output channels are not divisible by {g} groups"
            )));
        }
        let fan_in = inp / g * kernel * kernel;
        let shape = [out, inp / g, kernel, kernel];
        Ok(init.scoped(name, |init| Conv2d {
            weight: if zero {
                init.zeros("weight", &shape)
            } else {
                init.uniform("weight", &shape, (3.0 / fan_in as f64).sqrt())
            },
            bias: init.zeros("bias", &[out]),
            opts,
        }))
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1] * self.opts.groups
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.weight.tensor(), Some(&self.bias.tensor()), self.opts)
    }
}

impl Module for Conv2d {
    fn visit_parameters<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        f(&self.weight);
        f(&self.bias);
    }
}

/// Layer norm over the last axis with learnable scale and shift.
pub struct LayerNorm {
    pub gain: Parameter,
    pub shift: Parameter,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(init: &mut Init, name: &str, dim: usize) -> Self {
        init.scoped(name, |init| LayerNorm {
            gain: init.constant("gain", &[dim], 1.0),
            shift: init.zeros("shift", &[dim]),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(Self::EPS)?.mul(&self.gain.tensor())?.add(&self.shift.tensor())
    }
}

impl Module for LayerNorm {
    fn visit_parameters<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        f(&self.gain);
        f(&self.shift);
    }
}

/// `[C×H×W] → [HW×C]`, one row per spatial location.
pub fn tokens(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::dim(format!("expected [C,H,W], got {:?}", x.shape())));
    }
    x.reshape(&[x.dim(0), x.dim(1) * x.dim(2)])?.transpose()
}
