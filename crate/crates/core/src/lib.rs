//! Radar-camera 3D detection at desk scale.

mod binio;
pub mod config;
pub mod detection;
pub mod error;
pub mod gpf;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod radar;
pub mod tensor;
pub mod wa_moe;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::Tensor;
