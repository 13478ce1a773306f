//! Collapsing a cube onto the range-azimuth and elevation-azimuth planes.

use std::ops::Range;

use super::RadarCube;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Range bins dropped at each end before the elevation-azimuth projection.
pub const EA_TRIM: usize = 3;

pub const CHANNEL_NAMES: [&str; 6] = ["amp_max", "amp_median", "amp_var", "dop_max", "dop_median", "dop_var"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum View {
    /// Rows are range bins, columns azimuth bins.
    RangeAzimuth,
    /// Rows are elevation bins, columns azimuth bins.
    ElevationAzimuth,
}

impl View {
    pub fn short_name(&self) -> &'static str {
        match self {
            View::RangeAzimuth => "ra",
            View::ElevationAzimuth => "ea",
        }
    }
}

/// Six statistics per cell of one projection plane.
#[derive(Debug, Clone)]
pub struct ViewMap {
    pub view: View,
    /// `[6 × rows × cols]`, ordered as [`CHANNEL_NAMES`].
    pub channels: Tensor,
    pub row_coords: Vec<f64>,
    pub col_coords: Vec<f64>,
    /// Range bins that contributed to the map.
    pub range_bins: Range<usize>,
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Statistics of one collapsed slab of `(amplitude, doppler)` samples:
/// amplitude max / median / population variance, then the Doppler
/// coordinate of the strongest sample (ties go to the lower velocity), the
/// amplitude-weighted median and the amplitude-weighted variance. The
/// weighted median is the first coordinate, in increasing order, at which the
/// cumulative amplitude reaches half the total. Doppler statistics are zero
/// when the slab carries no amplitude.
pub fn slab_stats(amps: &[f64], dops: &[f64]) -> [f64; 6] {
    debug_assert_eq!(amps.len(), dops.len());
    let n = amps.len();
    if n == 0 {
        return [0.0; 6];
    }
    let mut sorted = amps.to_vec();
    sorted.sort_by(f64::total_cmp);
    let amp_max = sorted[n - 1];
    let amp_median = median_sorted(&sorted);
    let mean = amps.iter().sum::<f64>() / n as f64;
    let amp_var = if sorted[0] == amp_max {
        0.0
    } else {
        amps.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64
    };

    let total: f64 = amps.iter().sum();
    if total <= 0.0 {
        return [amp_max, amp_median, amp_var, 0.0, 0.0, 0.0];
    }
    let mut dop_max = dops[0];
    let mut best = amps[0];
    for (&a, &v) in amps.iter().zip(dops).skip(1) {
        if a > best || (a == best && v < dop_max) {
            best = a;
            dop_max = v;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| dops[i].total_cmp(&dops[j]));
    let mut cum = 0.0;
    let mut dop_median = dops[order[n - 1]];
    for &i in &order {
        cum += amps[i];
        if cum >= 0.5 * total {
            dop_median = dops[i];
            break;
        }
    }
    let wmean = amps.iter().zip(dops).map(|(a, v)| a * v).sum::<f64>() / total;
    let dop_var = amps.iter().zip(dops).map(|(a, v)| a * (v - wmean).powi(2)).sum::<f64>() / total;
    [amp_max, amp_median, amp_var, dop_max, dop_median, dop_var]
}

/// Projection without per-channel normalization.
pub fn project_raw(cube: &RadarCube, view: View) -> Result<ViewMap> {
    let dims = cube.dims();
    let (rows, range_bins, row_coords) = match view {
        View::RangeAzimuth => (dims.range, 0..dims.range, cube.range_m.clone()),
        View::ElevationAzimuth => {
            if dims.range <= 2 * EA_TRIM {
                return Err(Error::config(format!(
                    "elevation-azimuth view needs more than {} range bins, cube has {}",
                    2 * EA_TRIM,
                    dims.range
                )));
            }
            (dims.elevation, EA_TRIM..dims.range - EA_TRIM, cube.elevation_rad.clone())
        }
    };
    let cols = dims.azimuth;
    let plane = rows * cols;
    let mut out = vec![0.0; 6 * plane];
    let slab = match view {
        View::RangeAzimuth => dims.elevation * dims.doppler,
        View::ElevationAzimuth => range_bins.len() * dims.doppler,
    };
    let mut amps = Vec::with_capacity(slab);
    let mut dops = Vec::with_capacity(slab);
    for row in 0..rows {
        for a in 0..cols {
            amps.clear();
            dops.clear();
            match view {
                View::RangeAzimuth => {
                    for e in 0..dims.elevation {
                        for d in 0..dims.doppler {
                            amps.push(cube.at(row, a, e, d));
                            dops.push(cube.doppler_mps[d]);
                        }
                    }
                }
                View::ElevationAzimuth => {
                    for r in range_bins.clone() {
                        for d in 0..dims.doppler {
                            amps.push(cube.at(r, a, row, d));
                            dops.push(cube.doppler_mps[d]);
                        }
                    }
                }
            }
            let stats = slab_stats(&amps, &dops);
            for (ch, s) in stats.iter().enumerate() {
                out[ch * plane + row * cols + a] = *s;
            }
        }
    }
    Ok(ViewMap {
        view,
        channels: Tensor::new(&[6, rows, cols], out)?,
        row_coords,
        col_coords: cube.azimuth_rad.clone(),
        range_bins,
    })
}

/// Z-scores each channel over its map; constant channels are only centred.
pub fn normalize_channels(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::dim(format!("expected [C,H,W], got {:?}", x.shape())));
    }
    let plane = x.dim(1) * x.dim(2);
    let mut out = x.to_vec();
    for chunk in out.chunks_mut(plane) {
        if chunk.iter().all(|&v| v == chunk[0]) {
            chunk.fill(0.0);
            continue;
        }
        let mean = chunk.iter().sum::<f64>() / plane as f64;
        let var = chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / plane as f64;
        let std = var.sqrt();
        for v in chunk.iter_mut() {
            *v -= mean;
            if std > 0.0 {
                *v /= std;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

/// Projection followed by per-channel normalization.
pub fn project(cube: &RadarCube, view: View) -> Result<ViewMap> {
    let mut map = project_raw(cube, view)?;
    map.channels = normalize_channels(&map.channels)?;
    Ok(map)
}
