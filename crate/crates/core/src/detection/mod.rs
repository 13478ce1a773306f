//! Detection head, set matching, training loss and evaluation.

mod boxes;
mod coder;
mod head;
mod loss;
mod matching;
mod metrics;

pub use boxes::{bev_intersection, iou_3d, iou_bev, wrap_angle, Box3D, GroundTruthBox};
pub use coder::{BoxCoder, BOX_PARAMS};
pub use head::{fuse_score, DetectionHead, HeadConfig, IterationOutput, Mlp};
pub use loss::{detection_loss, focal_loss, FocalParams, LossBreakdown};
pub use matching::{assignment_cost, box_l1, hungarian_match, matching_cost, LossWeights, MatchTarget};
pub use metrics::{average_precision, evaluate, format_detections, ApResult, Detection, EvalMetrics, RECALL_POINTS};
