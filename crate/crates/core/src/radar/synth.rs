use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ObjectClass, RadarCube, RadarGeometry, SyntheticScene, Target};
use crate::detection::GroundTruthBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pinhole camera co-located with the radar, looking along +x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub hfov_rad: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            width: 64,
            height: 64,
            hfov_rad: std::f64::consts::FRAC_PI_2,
        }
    }
}

impl CameraConfig {
    pub fn focal(&self) -> f64 {
        self.width as f64 / 2.0 / (self.hfov_rad / 2.0).tan()
    }

    /// `(column, row)` in pixels, or `None` behind the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        if p[0] <= 0.1 {
            return None;
        }
        let f = self.focal();
        Some((
            self.width as f64 / 2.0 - f * p[1] / p[0],
            self.height as f64 / 2.0 - f * p[2] / p[0],
        ))
    }
}

/// One synthesized measurement with its labels.
#[derive(Debug, Clone)]
pub struct SceneSample {
    pub cube: RadarCube,
    /// `[3 × H × W]` RGB in `[0, 1]`.
    pub image: Tensor,
    pub boxes: Vec<GroundTruthBox>,
}

const SKY: f64 = 0.1;
const GROUND: f64 = 0.2;

/// Renders targets as depth-shaded, class-coloured rectangles, far to near.
pub fn render_image(targets: &[Target], camera: &CameraConfig, classes: &[ObjectClass]) -> Result<Tensor> {
    let (w, h) = (camera.width, camera.height);
    let mut img = vec![0.0; 3 * h * w];
    for row in 0..h {
        let v = if row as f64 + 0.5 > h as f64 / 2.0 { GROUND } else { SKY };
        for ch in 0..3 {
            img[(ch * h + row) * w..(ch * h + row + 1) * w].fill(v);
        }
    }
    let mut order: Vec<&Target> = targets.iter().collect();
    order.sort_by(|a, b| b.ground_range().total_cmp(&a.ground_range()));
    for t in order {
        let class = classes
            .get(t.class)
            .ok_or_else(|| Error::Scene(format!("target class {} has no definition", t.class)))?;
        let corners = t.ground_truth().bbox.corners();
        let Some(px) = corners.iter().map(|&c| camera.project(c)).collect::<Option<Vec<_>>>() else {
            continue;
        };
        let (mut c0, mut c1, mut r0, mut r1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for (c, r) in px {
            c0 = c0.min(c);
            c1 = c1.max(c);
            r0 = r0.min(r);
            r1 = r1.max(r);
        }
        let clamp = |v: f64, n: usize| v.max(0.0).min(n as f64) as usize;
        let (cs, ce) = (clamp(c0.floor(), w), clamp(c1.ceil(), w));
        let (rs, re) = (clamp(r0.floor(), h), clamp(r1.ceil(), h));
        let shade = 1.0 / (1.0 + t.ground_range() / 40.0);
        for ch in 0..3 {
            let value = class.color[ch] * shade;
            for row in rs..re {
                img[(ch * h + row) * w + cs..(ch * h + row) * w + ce].fill(value);
            }
        }
    }
    Tensor::new(&[3, h, w], img)
}

/// Builds the radar cube, the paired image and exact box labels for a scene.
pub fn synthesize(
    scene: &SyntheticScene,
    geometry: &RadarGeometry,
    camera: &CameraConfig,
    classes: &[ObjectClass],
) -> Result<SceneSample> {
    geometry.validate()?;
    scene.validate(geometry)?;
    let mut cube = RadarCube::zeros(geometry);
    let dims = geometry.dims;
    let mut amp = cube.amp.to_vec();

    let r_step = (geometry.range_m.1 - geometry.range_m.0) / dims.range as f64;
    let a_step = (geometry.azimuth_rad.1 - geometry.azimuth_rad.0) / dims.azimuth as f64;
    let e_step = (geometry.elevation_rad.1 - geometry.elevation_rad.0) / dims.elevation as f64;
    for t in &scene.targets {
        let range = t.ground_range();
        let ri = RadarGeometry::centre_index(dims.range, geometry.range_m, range);
        let ai = RadarGeometry::centre_index(dims.azimuth, geometry.azimuth_rad, t.azimuth());
        let ei = RadarGeometry::centre_index(dims.elevation, geometry.elevation_rad, t.elevation());
        let di = geometry.doppler_bin(t.radial_velocity);
        let footprint = 0.25 * (t.size[0] + t.size[1]);
        let sr = (0.6 * footprint / r_step).max(0.6);
        let sa = (0.6 * (footprint / range).atan() / a_step).max(0.6);
        let se = (0.6 * (t.size[2] / 2.0 / range).atan() / e_step).max(0.5);
        let window = |centre: f64, sigma: f64, n: usize| {
            let lo = (centre - 3.0 * sigma).floor().max(0.0) as usize;
            let hi = ((centre + 3.0 * sigma).ceil().max(0.0) as usize).min(n - 1);
            lo..=hi
        };
        for r in window(ri, sr, dims.range) {
            let gr = ((r as f64 - ri) / sr).powi(2);
            for a in window(ai, sa, dims.azimuth) {
                let ga = ((a as f64 - ai) / sa).powi(2);
                for e in window(ei, se, dims.elevation) {
                    let ge = ((e as f64 - ei) / se).powi(2);
                    amp[cube.index(r, a, e, di)] += t.reflectivity * (-0.5 * (gr + ga + ge)).exp();
                }
            }
        }
    }

    if scene.noise_floor > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
        for v in amp.iter_mut() {
            let u: f64 = 1.0 - rng.random::<f64>();
            *v += scene.noise_floor * (-2.0 * u.ln()).sqrt();
        }
    }
    cube.amp = Tensor::new(&dims.as_array(), amp)?;
    let image = render_image(&scene.targets, camera, classes)?;
    let boxes = scene.targets.iter().map(Target::ground_truth).collect();
    Ok(SceneSample { cube, image, boxes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar::default_classes;

    fn target(center: [f64; 3], vr: f64) -> Target {
        Target {
            center,
            size: [1.9, 4.5, 1.6],
            yaw: 0.0,
            radial_velocity: vr,
            reflectivity: 1.0,
            class: 0,
        }
    }

    fn argmax(cube: &RadarCube) -> [usize; 4] {
        let d = cube.dims();
        let (mut best, mut at) = (f64::MIN, [0; 4]);
        for r in 0..d.range {
            for a in 0..d.azimuth {
                for e in 0..d.elevation {
                    for dd in 0..d.doppler {
                        if cube.at(r, a, e, dd) > best {
                            best = cube.at(r, a, e, dd);
                            at = [r, a, e, dd];
                        }
                    }
                }
            }
        }
        at
    }

    #[test]
    fn empty_noiseless_scene_is_zero() {
        let s = synthesize(
            &SyntheticScene::empty(0.0, 1),
            &RadarGeometry::default(),
            &CameraConfig::default(),
            &default_classes(),
        )
        .unwrap();
        assert!(s.cube.amp.data().iter().all(|&v| v == 0.0));
        assert!(s.boxes.is_empty());
    }

    #[test]
    fn static_target_peaks_at_zero_doppler() {
        let mut scene = SyntheticScene::empty(0.05, 3);
        scene.targets.push(target([15.0, 2.0, -0.7], 0.0));
        let s = synthesize(&scene, &RadarGeometry::default(), &CameraConfig::default(), &default_classes()).unwrap();
        let at = argmax(&s.cube);
        assert_eq!(s.cube.doppler_mps[at[3]], 0.0);
    }

    #[test]
    fn range_bin_of_20m_target() {
        let mut scene = SyntheticScene::empty(0.02, 4);
        scene.targets.push(target([20.0, 0.0, -0.7], 3.0));
        let s = synthesize(&scene, &RadarGeometry::default(), &CameraConfig::default(), &default_classes()).unwrap();
        let at = argmax(&s.cube);
        let expected = (20.0f64 / 1.5).round() as i64;
        assert!((at[0] as i64 - expected).abs() <= 1, "argmax range bin {}", at[0]);
        assert_eq!(at[3], RadarGeometry::default().doppler_bin(3.0));
    }

    #[test]
    fn image_shows_target_colour() {
        let mut scene = SyntheticScene::empty(0.0, 0);
        scene.targets.push(target([10.0, 0.0, -0.7], 0.0));
        let cam = CameraConfig::default();
        let s = synthesize(&scene, &RadarGeometry::default(), &cam, &default_classes()).unwrap();
        let (col, row) = cam.project([10.0, 0.0, -0.7]).unwrap();
        let px = |ch: usize| s.image.data()[(ch * 64 + row as usize) * 64 + col as usize];
        assert!(px(0) > px(2), "red channel should dominate for a car");
        assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn noise_is_seeded() {
        let scene = SyntheticScene::empty(0.1, 11);
        let g = RadarGeometry::default();
        let a = synthesize(&scene, &g, &CameraConfig::default(), &default_classes()).unwrap();
        let b = synthesize(&scene, &g, &CameraConfig::default(), &default_classes()).unwrap();
        assert_eq!(a.cube.amp.data(), b.cube.amp.data());
        assert!(a.cube.amp.data().iter().all(|&v| v > 0.0));
    }
}
