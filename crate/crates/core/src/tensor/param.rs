use std::collections::HashSet;
use std::sync::{Mutex, RwLock};

use super::Tensor;
use crate::error::{Error, Result};

/// Optimizer moments kept alongside a parameter.
#[derive(Debug, Clone, Default)]
pub(crate) struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// A named learnable tensor. The optimizer replaces the underlying leaf on
/// every update, so a forward pass always sees an immutable snapshot.
#[derive(Debug)]
pub struct Parameter {
    name: String,
    value: RwLock<Tensor>,
    moments: Mutex<Moments>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Self {
        let n = data.len();
        Parameter {
            name: name.into(),
            value: RwLock::new(Tensor::leaf(shape, data)),
            moments: Mutex::new(Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            }),
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, shape, vec![0.0; shape.iter().product()])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// The current leaf tensor.
    pub fn tensor(&self) -> Tensor {
        self.value.read().expect("parameter lock").clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tensor().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tensor().numel()
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tensor().grad()
    }

    /// Replaces the value with `data` (same element count), dropping any
    /// gradient attached to the previous leaf.
    pub fn set_data(&self, data: Vec<f64>) -> Result<()> {
        let mut slot = self.value.write().expect("parameter lock");
        if data.len() != slot.numel() {
            return Err(Error::dim(format!(
                "parameter {} holds {} values, got {}",
                self.name,
                slot.numel(),
                data.len()
            )));
        }
        let shape = slot.shape().to_vec();
        *slot = Tensor::leaf(&shape, data);
        Ok(())
    }

    pub fn zero_grad(&self) {
        self.tensor().zero_grad();
    }

    pub(crate) fn with_moments<T>(&self, f: impl FnOnce(&mut Moments) -> T) -> T {
        f(&mut self.moments.lock().expect("moment lock"))
    }
}

/// Anything that owns parameters.
pub trait Module {
    fn visit_parameters<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter));

    fn parameters(&self) -> Vec<&Parameter> {
        let mut out = Vec::new();
        self.visit_parameters(&mut |p| out.push(p));
        out
    }

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    fn zero_grad(&self) {
        self.visit_parameters(&mut |p| p.zero_grad());
    }

    /// Overwrites every parameter with `value`.
    fn fill_parameters(&self, value: f64) {
        self.visit_parameters(&mut |p| {
            p.set_data(vec![value; p.numel()]).expect("same length");
        });
    }

    /// Fails if two parameters share a name.
    fn check_unique_names(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for p in self.parameters() {
            if !seen.insert(p.name().to_string()) {
                return Err(Error::Internal(format!("duplicate parameter name {}", p.name())));
            }
        }
        Ok(())
    }
}

impl Module for Parameter {
    fn visit_parameters<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        f(self)
    }
}

impl<M: Module> Module for Vec<M> {
    fn visit_parameters<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        for m in self {
            m.visit_parameters(f);
        }
    }
}

impl<M: Module> Module for Option<M> {
    fn visit_parameters<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        if let Some(m) = self {
            m.visit_parameters(f);
        }
    }
}
