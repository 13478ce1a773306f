//! Central finite-difference checking of backward passes.
//!
//! The function under test is reduced to a scalar with a fixed random
//! weighting of its output, so every output element contributes. Errors are
//! reported per checked tensor as `‖fd − analytic‖ / max(‖fd‖, ‖analytic‖)`
//! over the sampled coordinates.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{no_grad, Parameter, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates sampled per tensor; all of them when the tensor is smaller.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            max_coords: 48,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub coords: usize,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    /// Name and error of the worst entry, for failure messages.
    pub fn worst_entry(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

fn rel_error(fd: &[f64], an: &[f64]) -> f64 {
    let diff: f64 = fd.iter().zip(an).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let nf = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
    let na = an.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = nf.max(na);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Checks `f` against finite differences with respect to each tensor in
/// `inputs` and each parameter in `params`. `f` receives gradient-collecting
/// copies of `inputs` and must read parameters through [`Parameter::tensor`].
pub fn check_gradients<F>(inputs: &[Tensor], params: &[&Parameter], f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let probe = no_grad(|| f(inputs))?;
    let weights = Tensor::from_vec(
        probe.shape(),
        (0..probe.numel()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    );
    let objective = |xs: &[Tensor]| -> Result<Tensor> { Ok(f(xs)?.mul(&weights)?.sum()) };

    let leaves: Vec<Tensor> = inputs.iter().map(Tensor::to_leaf).collect();
    for p in params {
        p.zero_grad();
    }
    let loss = objective(&leaves)?;
    if !loss.requires_grad() {
        return Err(Error::contract("gradient check target does not depend on any checked tensor"));
    }
    loss.backward()?;

    let eval = |xs: &[Tensor]| -> Result<f64> { no_grad(|| objective(xs)).map(|t| t.item()) };
    let h = opts.step;
    let mut report = GradCheckReport::default();

    for (idx, x) in inputs.iter().enumerate() {
        let analytic = leaves[idx].grad().unwrap_or_else(|| vec![0.0; x.numel()]);
        let coords = pick(&mut rng, x.numel(), opts.max_coords);
        let mut fd = Vec::with_capacity(coords.len());
        let mut an = Vec::with_capacity(coords.len());
        for &c in &coords {
            let shifted = |delta: f64| -> Result<f64> {
                let mut data = x.to_vec();
                data[c] += delta;
                let mut xs = inputs.to_vec();
                xs[idx] = Tensor::from_vec(x.shape(), data);
                eval(&xs)
            };
            fd.push((shifted(h)? - shifted(-h)?) / (2.0 * h));
            an.push(analytic[c]);
        }
        report.entries.push(GradCheckEntry {
            name: format!("input{idx}"),
            coords: coords.len(),
            rel_error: rel_error(&fd, &an),
        });
    }

    for p in params {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        let base = p.tensor().to_vec();
        let coords = pick(&mut rng, base.len(), opts.max_coords);
        let mut fd = Vec::with_capacity(coords.len());
        let mut an = Vec::with_capacity(coords.len());
        for &c in &coords {
            let shifted = |delta: f64| -> Result<f64> {
                let mut data = base.clone();
                data[c] += delta;
                p.set_data(data)?;
                eval(inputs)
            };
            let plus = shifted(h)?;
            let minus = shifted(-h)?;
            fd.push((plus - minus) / (2.0 * h));
            an.push(analytic[c]);
        }
        p.set_data(base)?;
        report.entries.push(GradCheckEntry {
            name: p.name().to_string(),
            coords: coords.len(),
            rel_error: rel_error(&fd, &an),
        });
    }
    Ok(report)
}

fn pick(rng: &mut ChaCha8Rng, n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        let mut v = sample(rng, n, max).into_vec();
        v.sort_unstable();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passes_for_smooth_chain() {
        let x = Tensor::from_vec(&[2, 3], vec![0.3, -0.2, 0.9, 1.1, -0.7, 0.4]);
        let report = check_gradients(
            &[x],
            &[],
            |xs| xs[0].sigmoid().mul(&xs[0])?.softmax(1),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.worst() < 1e-6, "{report:?}");
    }

    #[test]
    fn detects_wrong_gradient() {
        // Backward deliberately returns twice the true derivative.
        let x = Tensor::from_vec(&[3], vec![0.5, 1.0, -1.0]);
        let report = check_gradients(
            &[x],
            &[],
            |xs| {
                let a = xs[0].clone();
                let data = a.data().iter().map(|v| v * v).collect();
                let src = a.clone();
                Ok(Tensor::from_op("bad_square", vec![3], data, vec![a], move |g| {
                    vec![Some(g.iter().zip(src.data()).map(|(g, x)| 4.0 * g * x).collect())]
                }))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.worst() > 0.1);
    }

    #[test]
    fn perturbs_parameters_and_restores_them() {
        let w = Parameter::new("w", &[2, 2], vec![0.5, -1.0, 2.0, 0.25]);
        let x = Tensor::from_vec(&[2, 1], vec![1.5, -0.5]);
        let report = check_gradients(
            &[x],
            &[&w],
            |xs| Ok(w.tensor().matmul(&xs[0])?.tanh()),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.worst() < 1e-6, "{report:?}");
        assert_eq!(w.tensor().data(), &[0.5, -1.0, 2.0, 0.25]);
    }
}
