use std::fmt::Write as _;

use super::{iou_3d, iou_bev, Box3D, GroundTruthBox};

/// Number of recall sample points in interpolated AP.
pub const RECALL_POINTS: usize = 40;

/// One scored box after decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub scene: usize,
    pub class: usize,
    /// Foreground class distribution, renormalized to sum to one.
    pub class_probs: Vec<f64>,
    /// Unnormalized probability of `class`.
    pub class_score: f64,
    pub confidence: f64,
    pub uncertainty: f64,
    /// `class_score · confidence · uncertainty`.
    pub score: f64,
    pub bbox: Box3D,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApResult {
    pub ap: f64,
    pub num_gt: usize,
    pub num_det: usize,
    /// Detections were scored against an empty ground-truth set.
    pub no_ground_truth: bool,
}

/// Interpolated AP of scored `(scene, score, box)` detections against
/// `(scene, box)` ground truths. Matching is greedy in descending score,
/// within each scene, requiring `iou ≥ threshold`.
pub fn average_precision(
    dets: &[(usize, f64, Box3D)],
    gts: &[(usize, Box3D)],
    iou: impl Fn(&Box3D, &Box3D) -> f64,
    threshold: f64,
) -> ApResult {
    let mut result = ApResult {
        ap: 0.0,
        num_gt: gts.len(),
        num_det: dets.len(),
        no_ground_truth: gts.is_empty() && !dets.is_empty(),
    };
    if gts.is_empty() || dets.is_empty() {
        return result;
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].1.total_cmp(&dets[a].1).then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(dets.len());
    for (rank, &i) in order.iter().enumerate() {
        let (scene, _, ref b) = dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, (gs, g)) in gts.iter().enumerate() {
            if *gs != scene || taken[j] {
                continue;
            }
            let o = iou(b, g);
            if o >= threshold && best.is_none_or(|(_, bo)| o > bo) {
                best = Some((j, o));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
            tp += 1;
        }
        curve.push((tp as f64 / gts.len() as f64, tp as f64 / (rank + 1) as f64));
    }
    // Running maximum of precision from the high-recall end.
    let mut envelope = vec![0.0; curve.len()];
    let mut best = 0.0f64;
    for i in (0..curve.len()).rev() {
        best = best.max(curve[i].1);
        envelope[i] = best;
    }
    let mut sum = 0.0;
    for k in 1..=RECALL_POINTS {
        let r = k as f64 / RECALL_POINTS as f64;
        if let Some(i) = curve.iter().position(|&(rec, _)| rec >= r - 1e-12) {
            sum += envelope[i];
        }
    }
    result.ap = sum / RECALL_POINTS as f64;
    result
}

/// Per-class and mean BEV and 3D AP.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub threshold: f64,
    pub bev: Vec<ApResult>,
    pub iou3d: Vec<ApResult>,
    /// Mean over classes with at least one ground truth.
    pub mean_bev: f64,
    pub mean_3d: f64,
}

pub fn evaluate(dets: &[Detection], gts: &[(usize, GroundTruthBox)], num_classes: usize, threshold: f64) -> EvalMetrics {
    let mut bev = Vec::with_capacity(num_classes);
    let mut iou3d = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let d: Vec<(usize, f64, Box3D)> = dets.iter().filter(|d| d.class == c).map(|d| (d.scene, d.score, d.bbox)).collect();
        let g: Vec<(usize, Box3D)> = gts.iter().filter(|(_, g)| g.class == c).map(|(s, g)| (*s, g.bbox)).collect();
        bev.push(average_precision(&d, &g, iou_bev, threshold));
        iou3d.push(average_precision(&d, &g, iou_3d, threshold));
    }
    let mean = |rs: &[ApResult]| {
        let present: Vec<f64> = rs.iter().filter(|r| r.num_gt > 0).map(|r| r.ap).collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    };
    EvalMetrics {
        threshold,
        mean_bev: mean(&bev),
        mean_3d: mean(&iou3d),
        bev,
        iou3d,
    }
}

/// One line per detection: `scene class score x y z w l h yaw`.
pub fn format_detections(dets: &[Detection], class_names: &[String]) -> String {
    let mut s = String::new();
    for d in dets {
        let b = &d.bbox;
        let name = class_names.get(d.class).map_or("unknown", String::as_str);
        let _ = writeln!(
            s,
            "{} {} {:.6} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.5}",
            d.scene, name, d.score, b.x, b.y, b.z, b.w, b.l, b.h, b.yaw
        );
    }
    s
}
