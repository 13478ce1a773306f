//! Wavelet-domain mixture of experts and the feature pyramid built on it.

mod block;
mod fpn;
mod gate;

pub use block::{Expert, WaMoe, WaMoeConfig, WaMoeTrace};
pub use fpn::{Fpn, FpnConfig, FpnLevel, MoeOptions};
pub use gate::{top_k_softmax, GateOutput};
