use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Routing weights per location.
#[derive(Debug, Clone)]
pub struct GateOutput {
    /// `[N_e × h × w]`; non-selected experts are exactly zero.
    pub weights: Tensor,
    /// Selected expert indices per location, best first.
    pub active: Vec<Vec<usize>>,
}

/// Indices of the `k` largest values, ties broken towards the lower index.
pub(crate) fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    // Adding +0.0 maps -0.0 to +0.0 so signed zeros count as a tie.
    let key = |i: usize| values[i] + 0.0;
    idx.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Softmax over the `k` largest logits along axis 0 of `[N × ...]`, zero
/// elsewhere. Non-selected logits receive no gradient.
pub fn top_k_softmax(logits: &Tensor, k: usize) -> Result<GateOutput> {
    let n = *logits.shape().first().ok_or_else(|| Error::dim("top_k_softmax on rank-0 tensor"))?;
    if k == 0 || k > n {
        return Err(Error::config(format!("top_k {k} must lie in 1..={n}")));
    }
    let inner = logits.numel() / n;
    let z = logits.data();
    let mut out = vec![0.0; z.len()];
    let mut active = Vec::with_capacity(inner);
    let mut column = vec![0.0; n];
    for loc in 0..inner {
        for e in 0..n {
            column[e] = z[e * inner + loc];
        }
        let sel = top_k_indices(&column, k);
        let m = column[sel[0]];
        let exps: Vec<f64> = sel.iter().map(|&e| (column[e] - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (&e, x) in sel.iter().zip(&exps) {
            out[e * inner + loc] = x / total;
        }
        active.push(sel);
    }
    let w = out.clone();
    let sel_all = active.clone();
    let weights = Tensor::from_op("top_k_softmax", logits.shape().to_vec(), out, vec![logits.clone()], move |g| {
        let mut gi = vec![0.0; w.len()];
        for (loc, sel) in sel_all.iter().enumerate() {
            let dot: f64 = sel.iter().map(|&e| g[e * inner + loc] * w[e * inner + loc]).sum();
            for &e in sel {
                let i = e * inner + loc;
                gi[i] = w[i] * (g[i] - dot);
            }
        }
        vec![Some(gi)]
    });
    Ok(GateOutput { weights, active })
}
