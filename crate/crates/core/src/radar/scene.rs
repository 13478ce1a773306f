//! Ground-truth scenes and the random scene sampler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RadarGeometry;
use crate::detection::{Box3D, GroundTruthBox};
use crate::error::{Error, Result};

/// One object category with its nominal appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectClass {
    pub name: String,
    /// Nominal `(w, l, h)` in metres.
    pub size: [f64; 3],
    /// Relative size jitter applied uniformly per dimension.
    pub size_jitter: f64,
    pub reflectivity: f64,
    /// Image colour in `[0, 1]` RGB.
    pub color: [f64; 3],
}

pub fn default_classes() -> Vec<ObjectClass> {
    vec![
        ObjectClass {
            name: "car".into(),
            size: [1.9, 4.5, 1.6],
            size_jitter: 0.1,
            reflectivity: 1.0,
            color: [0.9, 0.25, 0.2],
        },
        ObjectClass {
            name: "truck".into(),
            size: [2.6, 8.0, 3.2],
            size_jitter: 0.1,
            reflectivity: 1.6,
            color: [0.2, 0.4, 0.95],
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    /// Box centre `(x, y, z)`, x forward, y left, z up.
    pub center: [f64; 3],
    /// `(w, l, h)`.
    pub size: [f64; 3],
    pub yaw: f64,
    pub radial_velocity: f64,
    pub reflectivity: f64,
    pub class: usize,
}

impl Target {
    pub fn ground_range(&self) -> f64 {
        self.center[0].hypot(self.center[1])
    }

    pub fn azimuth(&self) -> f64 {
        self.center[1].atan2(self.center[0])
    }

    pub fn elevation(&self) -> f64 {
        self.center[2].atan2(self.ground_range())
    }

    pub fn ground_truth(&self) -> GroundTruthBox {
        GroundTruthBox {
            class: self.class,
            bbox: Box3D::new(self.center, self.size, self.yaw),
            radial_velocity: self.radial_velocity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub targets: Vec<Target>,
    pub noise_floor: f64,
    /// Seeds the measurement noise.
    pub seed: u64,
}

impl SyntheticScene {
    pub fn empty(noise_floor: f64, seed: u64) -> Self {
        SyntheticScene {
            targets: Vec::new(),
            noise_floor,
            seed,
        }
    }

    /// Checks every target against the measurement grid.
    pub fn validate(&self, geometry: &RadarGeometry) -> Result<()> {
        if !(self.noise_floor >= 0.0 && self.noise_floor.is_finite()) {
            return Err(Error::Scene(format!("noise floor {} must be non-negative", self.noise_floor)));
        }
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        for (i, t) in self.targets.iter().enumerate() {
            let what = format!("target {i} (class {}, centre {:?})", t.class, t.center);
            if !(t.reflectivity > 0.0 && t.reflectivity.is_finite()) {
                return Err(Error::Scene(format!("{what}: reflectivity must be positive")));
            }
            if t.size.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::Scene(format!("{what}: size {:?} must be positive", t.size)));
            }
            if !inside(t.ground_range(), geometry.range_m) {
                return Err(Error::Scene(format!(
                    "{what}: range {:.2} m outside {:?}",
                    t.ground_range(),
                    geometry.range_m
                )));
            }
            if !inside(t.azimuth(), geometry.azimuth_rad) {
                return Err(Error::Scene(format!(
                    "{what}: azimuth {:.3} rad outside {:?}",
                    t.azimuth(),
                    geometry.azimuth_rad
                )));
            }
            if !inside(t.elevation(), geometry.elevation_rad) {
                return Err(Error::Scene(format!(
                    "{what}: elevation {:.3} rad outside {:?}",
                    t.elevation(),
                    geometry.elevation_rad
                )));
            }
            let (lo, hi) = geometry.doppler_mps;
            if !(t.radial_velocity >= lo && t.radial_velocity < hi) {
                return Err(Error::Scene(format!(
                    "{what}: radial velocity {} outside [{lo}, {hi})",
                    t.radial_velocity
                )));
            }
        }
        Ok(())
    }
}

/// Distribution of randomly generated scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub min_targets: usize,
    pub max_targets: usize,
    pub range_m: (f64, f64),
    pub azimuth_rad: (f64, f64),
    /// Yaw is drawn uniformly from `±yaw_spread`.
    pub yaw_spread: f64,
    pub max_speed: f64,
    pub static_fraction: f64,
    pub noise_floor: f64,
    /// Height of the ground plane below the sensor.
    pub ground_z: f64,
    /// Minimum centre distance between two targets.
    pub min_separation: f64,
    pub classes: Vec<ObjectClass>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            min_targets: 1,
            max_targets: 3,
            range_m: (8.0, 40.0),
            azimuth_rad: (-35f64.to_radians(), 35f64.to_radians()),
            yaw_spread: 0.3,
            max_speed: 6.0,
            static_fraction: 0.3,
            noise_floor: 0.05,
            ground_z: -1.5,
            min_separation: 6.0,
            classes: default_classes(),
        }
    }
}

/// Per-scene seed derived from a dataset seed.
pub fn scene_seed(dataset_seed: u64, index: u64) -> u64 {
    let mut z = dataset_seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::config("scene config needs at least one class"));
        }
        if self.min_targets > self.max_targets {
            return Err(Error::config(format!(
                "min_targets {} exceeds max_targets {}",
                self.min_targets, self.max_targets
            )));
        }
        if self.range_m.0 >= self.range_m.1 || self.azimuth_rad.0 >= self.azimuth_rad.1 {
            return Err(Error::config("scene range/azimuth windows must be increasing"));
        }
        Ok(())
    }

    /// Draws a scene; identical seeds give identical scenes.
    pub fn sample(&self, seed: u64) -> SyntheticScene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = rng.random_range(self.min_targets..=self.max_targets);
        let mut targets: Vec<Target> = Vec::with_capacity(count);
        let mut attempts = 0;
        while targets.len() < count && attempts < 200 {
            attempts += 1;
            let class = rng.random_range(0..self.classes.len());
            let spec = &self.classes[class];
            let jitter = |rng: &mut ChaCha8Rng, v: f64| v * (1.0 + rng.random_range(-spec.size_jitter..=spec.size_jitter));
            let size = [
                jitter(&mut rng, spec.size[0]),
                jitter(&mut rng, spec.size[1]),
                jitter(&mut rng, spec.size[2]),
            ];
            let r = rng.random_range(self.range_m.0..self.range_m.1);
            let az = rng.random_range(self.azimuth_rad.0..self.azimuth_rad.1);
            let yaw = rng.random_range(-self.yaw_spread..=self.yaw_spread);
            let speed = if rng.random_bool(self.static_fraction) {
                0.0
            } else {
                rng.random_range(-self.max_speed..self.max_speed)
            };
            let center = [r * az.cos(), r * az.sin(), self.ground_z + size[2] / 2.0];
            let clear = targets.iter().all(|t| {
                (t.center[0] - center[0]).hypot(t.center[1] - center[1]) >= self.min_separation
            });
            if !clear {
                continue;
            }
            targets.push(Target {
                center,
                size,
                yaw,
                radial_velocity: speed,
                reflectivity: spec.reflectivity,
                class,
            });
        }
        SyntheticScene {
            targets,
            noise_floor: self.noise_floor,
            seed: seed ^ 0xA5A5_5A5A_DEAD_BEEF,
        }
    }
}
