//! 4D radar cubes: synthesis, view projection and file formats.
//!
//! Cubes are indexed `[range, azimuth, elevation, doppler]`. Range, azimuth
//! and elevation coordinates are bin centres; Doppler coordinates follow the
//! FFT convention `lo + i·step`, so an even bin count keeps an exact
//! zero-velocity bin at `D/2` for a symmetric extent.

mod dataset;
mod io;
mod project;
mod scene;
mod synth;

pub use dataset::{read_manifest, scene_dir, write_dataset, DatasetSpec, LoadedScene, Manifest};
pub use io::{
    decode_cube, encode_cube, format_boxes, parse_boxes, read_cube, read_tensor, write_cube, write_tensor,
};
pub use project::{normalize_channels, project, project_raw, slab_stats, View, ViewMap, CHANNEL_NAMES, EA_TRIM};
pub use scene::{default_classes, scene_seed, ObjectClass, SceneConfig, SyntheticScene, Target};
pub use synth::{render_image, synthesize, CameraConfig, SceneSample};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Cube extent along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CubeDims {
    pub range: usize,
    pub azimuth: usize,
    pub elevation: usize,
    pub doppler: usize,
}

impl CubeDims {
    pub fn as_array(&self) -> [usize; 4] {
        [self.range, self.azimuth, self.elevation, self.doppler]
    }

    pub fn cells(&self) -> usize {
        self.as_array().iter().product()
    }
}

impl Default for CubeDims {
    fn default() -> Self {
        CubeDims {
            range: 32,
            azimuth: 32,
            elevation: 8,
            doppler: 16,
        }
    }
}

/// Physical extent of the sensor's measurement grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarGeometry {
    pub dims: CubeDims,
    pub range_m: (f64, f64),
    pub azimuth_rad: (f64, f64),
    pub elevation_rad: (f64, f64),
    pub doppler_mps: (f64, f64),
}

impl Default for RadarGeometry {
    fn default() -> Self {
        RadarGeometry {
            dims: CubeDims::default(),
            range_m: (0.0, 48.0),
            azimuth_rad: (-std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_4),
            elevation_rad: (-20f64.to_radians(), 20f64.to_radians()),
            doppler_mps: (-8.0, 8.0),
        }
    }
}

fn centres(n: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    let step = (hi - lo) / n as f64;
    (0..n).map(|i| lo + (i as f64 + 0.5) * step).collect()
}

fn fft_bins(n: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    let step = (hi - lo) / n as f64;
    (0..n).map(|i| lo + i as f64 * step).collect()
}

impl RadarGeometry {
    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d.as_array().iter().any(|&n| n < 4) {
            return Err(Error::config(format!(
                "cube dims must be at least 4 on every axis, got {:?}",
                d.as_array()
            )));
        }
        for (name, (lo, hi)) in [
            ("range", self.range_m),
            ("azimuth", self.azimuth_rad),
            ("elevation", self.elevation_rad),
            ("doppler", self.doppler_mps),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::config(format!("{name} extent ({lo}, {hi}) is not increasing")));
            }
        }
        if self.range_m.0 < 0.0 {
            return Err(Error::config("range extent must start at or beyond 0 m"));
        }
        Ok(())
    }

    pub fn range_axis(&self) -> Vec<f64> {
        centres(self.dims.range, self.range_m)
    }

    pub fn azimuth_axis(&self) -> Vec<f64> {
        centres(self.dims.azimuth, self.azimuth_rad)
    }

    pub fn elevation_axis(&self) -> Vec<f64> {
        centres(self.dims.elevation, self.elevation_rad)
    }

    pub fn doppler_axis(&self) -> Vec<f64> {
        fft_bins(self.dims.doppler, self.doppler_mps)
    }

    /// Continuous bin index of a value on a centred axis.
    pub(crate) fn centre_index(n: usize, (lo, hi): (f64, f64), value: f64) -> f64 {
        (value - lo) / ((hi - lo) / n as f64) - 0.5
    }

    /// Nearest Doppler bin for a radial velocity.
    pub fn doppler_bin(&self, v: f64) -> usize {
        let (lo, hi) = self.doppler_mps;
        let step = (hi - lo) / self.dims.doppler as f64;
        (((v - lo) / step).round().max(0.0) as usize).min(self.dims.doppler - 1)
    }
}

/// Dense amplitude grid with physical axis coordinates.
#[derive(Debug, Clone)]
pub struct RadarCube {
    pub amp: Tensor,
    pub range_m: Vec<f64>,
    pub azimuth_rad: Vec<f64>,
    pub elevation_rad: Vec<f64>,
    pub doppler_mps: Vec<f64>,
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite()) && v.windows(2).all(|w| w[0] < w[1])
}

impl RadarCube {
    pub fn new(
        amp: Tensor,
        range_m: Vec<f64>,
        azimuth_rad: Vec<f64>,
        elevation_rad: Vec<f64>,
        doppler_mps: Vec<f64>,
    ) -> Result<Self> {
        let want = [range_m.len(), azimuth_rad.len(), elevation_rad.len(), doppler_mps.len()];
        if amp.shape() != want {
            return Err(Error::dim(format!(
                "cube amplitude shape {:?} does not match axis lengths {want:?}",
                amp.shape()
            )));
        }
        for (name, axis) in [
            ("range", &range_m),
            ("azimuth", &azimuth_rad),
            ("elevation", &elevation_rad),
            ("doppler", &doppler_mps),
        ] {
            if !strictly_increasing(axis) {
                return Err(Error::config(format!("{name} coordinates are not strictly increasing")));
            }
        }
        if let Some(bad) = amp.data().iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::Numeric(format!("cube amplitude {bad} is negative or non-finite")));
        }
        Ok(RadarCube {
            amp,
            range_m,
            azimuth_rad,
            elevation_rad,
            doppler_mps,
        })
    }

    /// An all-zero cube on the grid of `geometry`.
    pub fn zeros(geometry: &RadarGeometry) -> Self {
        RadarCube {
            amp: Tensor::zeros(&geometry.dims.as_array()),
            range_m: geometry.range_axis(),
            azimuth_rad: geometry.azimuth_axis(),
            elevation_rad: geometry.elevation_axis(),
            doppler_mps: geometry.doppler_axis(),
        }
    }

    pub fn dims(&self) -> CubeDims {
        CubeDims {
            range: self.range_m.len(),
            azimuth: self.azimuth_rad.len(),
            elevation: self.elevation_rad.len(),
            doppler: self.doppler_mps.len(),
        }
    }

    #[inline]
    pub fn index(&self, r: usize, a: usize, e: usize, d: usize) -> usize {
        let dims = self.dims();
        ((r * dims.azimuth + a) * dims.elevation + e) * dims.doppler + d
    }

    pub fn at(&self, r: usize, a: usize, e: usize, d: usize) -> f64 {
        self.amp.data()[self.index(r, a, e, d)]
    }
}
