use super::coder::BOX_PARAMS;
use crate::error::{Error, Result};

/// Relative weights of the classification and box terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub cls: f64,
    pub boxes: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { cls: 2.0, boxes: 5.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.cls) || !ok(self.boxes) || (self.cls == 0.0 && self.boxes == 0.0) {
            return Err(Error::config(format!(
                "loss weights must be non-negative and not both zero, got cls {} box {}",
                self.cls, self.boxes
            )));
        }
        Ok(())
    }
}

/// Minimum-cost assignment of every column (ground truth) to a distinct row
/// (query). Returns `(row, column)` pairs sorted by row.
pub fn hungarian_match(cost: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if cost.iter().any(|r| r.len() != cols) {
        return Err(Error::dim("ragged cost matrix"));
    }
    if cols > rows {
        return Err(Error::contract(format!("{cols} ground truths but only {rows} queries")));
    }
    if let Some(bad) = cost.iter().flatten().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite matching cost {bad}")));
    }
    if cols == 0 {
        return Ok(Vec::new());
    }
    // Shortest augmenting paths with potentials; ground truths are the
    // "workers" (n = cols) and queries the "jobs" (m = rows), 1-based.
    let (n, m) = (cols, rows);
    let a = |i: usize, j: usize| cost[j - 1][i - 1];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = a(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m).filter(|&j| owner[j] != 0).map(|j| (j - 1, owner[j] - 1)).collect();
    pairs.sort_unstable();
    Ok(pairs)
}

/// Sum of `cost[row][col]` over `pairs`.
pub fn assignment_cost(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(r, c)| cost[r][c]).sum()
}

/// L1 distance between two normalized box parameter vectors.
pub fn box_l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Target of one ground truth in the regression space.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchTarget {
    pub class: usize,
    pub params: [f64; BOX_PARAMS],
}

/// `cost[i][j] = λ_cls (1 − p_i[class_j]) + λ_box · L1(box_i, box_j)`.
///
/// `probs[i]` is query `i`'s class distribution (background last).
pub fn matching_cost(probs: &[Vec<f64>], boxes: &[Vec<f64>], targets: &[MatchTarget], weights: LossWeights) -> Vec<Vec<f64>> {
    probs
        .iter()
        .zip(boxes)
        .map(|(p, b)| {
            targets
                .iter()
                .map(|t| weights.cls * (1.0 - p[t.class]) + weights.boxes * box_l1(b, &t.params))
                .collect()
        })
        .collect()
}
