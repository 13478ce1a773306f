//! Progressive camera/radar fusion: pooled sigmoid alignment of image and
//! elevation features, then reference-point guided deformable sampling of
//! the aligned and range-azimuth pyramids.

mod deform;
mod gsa;
mod reference;

pub use deform::{DeformOutput, DeformableAttention, PathFusion};
pub use gsa::{dense_attention_op_count, gsa_op_count, pooled_sigmoid_attention, Gsa, GsaConfig};
pub use reference::{anchor_features, anchor_grid, peak_anchors, PoolAttn, QueryState, ReferenceGenerator, ReferencePoints};

use crate::tensor::Tensor;

/// Align-corners `(u, v)` coordinates of an `h × w` grid, `[hw×2]`.
pub fn grid_coords(h: usize, w: usize) -> Tensor {
    let c = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
    let mut data = Vec::with_capacity(2 * h * w);
    for i in 0..h {
        for j in 0..w {
            data.extend([c(j, w), c(i, h)]);
        }
    }
    Tensor::from_vec(&[h * w, 2], data)
}
