use std::f64::consts::PI;

use super::Parameter;
use crate::error::{Error, Result};

/// Cosine decay from `lr0` at step 0 to zero at `total`.
pub fn cosine_lr(step: usize, total: usize, lr0: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let t = step.min(total) as f64 / total as f64;
    0.5 * lr0 * (1.0 + (PI * t).cos())
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    steps: u64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            steps: 0,
        }
    }
}

impl AdamW {
    pub fn new(betas: (f64, f64), weight_decay: f64) -> Self {
        AdamW {
            beta1: betas.0,
            beta2: betas.1,
            weight_decay,
            ..Default::default()
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every parameter. All gradients must be present;
    /// nothing is modified if one is missing.
    pub fn step(&mut self, params: &[&Parameter], lr: f64) -> Result<()> {
        let grads: Vec<Vec<f64>> = params
            .iter()
            .map(|p| {
                p.grad()
                    .ok_or_else(|| Error::contract(format!("parameter {} has no gradient", p.name())))
            })
            .collect::<Result<_>>()?;
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        for (p, g) in params.iter().zip(grads) {
            let mut w = p.tensor().to_vec();
            p.with_moments(|mom| {
                for i in 0..w.len() {
                    mom.m[i] = self.beta1 * mom.m[i] + (1.0 - self.beta1) * g[i];
                    mom.v[i] = self.beta2 * mom.v[i] + (1.0 - self.beta2) * g[i] * g[i];
                    let mhat = mom.m[i] / bc1;
                    let vhat = mom.v[i] / bc2;
                    w[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * w[i]);
                }
            });
            p.set_data(w)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 200, 1e-4), 1e-4);
        assert_eq!(cosine_lr(200, 200, 1e-4), 0.0);
        assert!((cosine_lr(100, 200, 1e-4) - 5e-5).abs() < 1e-18);
    }

    #[test]
    fn adamw_descends_on_square() {
        let w = Parameter::new("w", &[1], vec![1.0]);
        let f = |p: &Parameter| p.tensor().mul(&p.tensor()).unwrap().sum();
        let before = f(&w).item();
        f(&w).backward().unwrap();
        let mut opt = AdamW::default();
        opt.step(&[&w], 1e-2).unwrap();
        assert!(f(&w).item() < before);
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let w = Parameter::new("w", &[1], vec![1.0]);
        let mut opt = AdamW::default();
        assert!(matches!(opt.step(&[&w], 1e-3), Err(Error::Contract(_))));
        assert_eq!(opt.steps_taken(), 0);
    }
}
