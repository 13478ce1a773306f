use super::head::IterationOutput;
use super::matching::{hungarian_match, matching_cost, LossWeights, MatchTarget};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Focal loss shape parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams {
    pub gamma: f64,
    /// Weight of foreground targets; background targets get `1 − alpha`.
    pub alpha: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams { gamma: 2.0, alpha: 0.25 }
    }
}

/// Total loss with its components averaged over iterations.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: Tensor,
    pub cls: f64,
    pub boxes: f64,
    /// Matched `(query, target)` pairs of the last iteration.
    pub matches: Vec<(usize, usize)>,
}

/// Softmax focal loss of `logits: [Nq×(C+1)]` against per-query targets
/// (`C` means background), summed over queries.
pub fn focal_loss(logits: &Tensor, targets: &[usize], focal: FocalParams) -> Result<Tensor> {
    let (nq, k) = (logits.dim(0), logits.dim(1));
    if targets.len() != nq {
        return Err(Error::dim(format!("{} targets for {nq} queries", targets.len())));
    }
    let mut onehot = vec![0.0; nq * k];
    let mut alpha = vec![0.0; nq];
    for (i, &t) in targets.iter().enumerate() {
        onehot[i * k + t] = 1.0;
        alpha[i] = if t + 1 == k { 1.0 - focal.alpha } else { focal.alpha };
    }
    let log_p = logits.log_softmax(1)?.mul(&Tensor::from_vec(&[nq, k], onehot))?.sum_axis(1)?;
    let modulator = log_p.exp().neg().add_scalar(1.0).powf(focal.gamma);
    Ok(log_p.mul(&modulator)?.mul(&Tensor::from_vec(&[nq], alpha))?.sum().neg())
}

/// Matched set loss, averaged over refinement iterations. Each iteration is
/// matched independently. Both terms are normalized by the target count.
pub fn detection_loss(
    outputs: &[IterationOutput],
    targets: &[MatchTarget],
    weights: LossWeights,
    focal: FocalParams,
) -> Result<LossBreakdown> {
    if outputs.is_empty() {
        return Err(Error::config("loss needs at least one iteration output"));
    }
    let norm = targets.len().max(1) as f64;
    let mut total: Option<Tensor> = None;
    let (mut cls_sum, mut box_sum) = (0.0, 0.0);
    let mut matches = Vec::new();
    for out in outputs {
        let (nq, k) = (out.logits.dim(0), out.logits.dim(1));
        let probs = out.logits.detach().softmax(1)?;
        let prob_rows: Vec<Vec<f64>> = probs.data().chunks(k).map(<[f64]>::to_vec).collect();
        let box_rows: Vec<Vec<f64>> = out.boxes.data().chunks(out.boxes.dim(1)).map(<[f64]>::to_vec).collect();
        let pairs = hungarian_match(&matching_cost(&prob_rows, &box_rows, targets, weights))?;

        let mut classes = vec![k - 1; nq];
        for &(q, t) in &pairs {
            classes[q] = targets[t].class;
        }
        let cls = focal_loss(&out.logits, &classes, focal)?.mul_scalar(1.0 / norm);
        let mut term = cls.mul_scalar(weights.cls);
        cls_sum += cls.item();
        if !pairs.is_empty() {
            let rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let goal: Vec<f64> = pairs.iter().flat_map(|p| targets[p.1].params).collect();
            let goal = Tensor::from_vec(&[pairs.len(), goal.len() / pairs.len()], goal);
            let l1 = out.boxes.index_select(&rows)?.sub(&goal)?.abs().sum().mul_scalar(1.0 / norm);
            box_sum += l1.item();
            term = term.add(&l1.mul_scalar(weights.boxes))?;
        }
        total = Some(match total {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
        matches = pairs;
    }
    let t = outputs.len() as f64;
    Ok(LossBreakdown {
        total: total.expect("non-empty outputs").mul_scalar(1.0 / t),
        cls: cls_sum / t,
        boxes: box_sum / t,
        matches,
    })
}
