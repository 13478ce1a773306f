//! On-disk dataset: `manifest.json` plus `scenes/NNNN/{cube.bin,image.bin,boxes.txt}`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{format_boxes, parse_boxes, read_cube, read_tensor, scene_seed, synthesize, write_cube, write_tensor};
use super::{CameraConfig, RadarCube, RadarGeometry, SceneConfig};
use crate::detection::GroundTruthBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub count: usize,
    pub cube_dims: [usize; 4],
    pub image_size: [usize; 2],
    pub classes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub seed: u64,
    pub count: usize,
    pub geometry: RadarGeometry,
    pub camera: CameraConfig,
    pub scenes: SceneConfig,
}

pub fn scene_dir(root: &Path, index: usize) -> PathBuf {
    root.join("scenes").join(format!("{index:04}"))
}

/// Synthesizes `spec.count` scenes under `root`, in parallel over scenes.
pub fn write_dataset(root: &Path, spec: &DatasetSpec) -> Result<Manifest> {
    spec.geometry.validate()?;
    spec.scenes.validate()?;
    fs::create_dir_all(root.join("scenes"))?;
    (0..spec.count).into_par_iter().try_for_each(|i| -> Result<()> {
        let scene = spec.scenes.sample(scene_seed(spec.seed, i as u64));
        let sample = synthesize(&scene, &spec.geometry, &spec.camera, &spec.scenes.classes)?;
        let dir = scene_dir(root, i);
        fs::create_dir_all(&dir)?;
        write_cube(&dir.join("cube.bin"), &sample.cube)?;
        write_tensor(&dir.join("image.bin"), &sample.image)?;
        fs::write(dir.join("boxes.txt"), format_boxes(&sample.boxes))?;
        Ok(())
    })?;
    let manifest = Manifest {
        seed: spec.seed,
        count: spec.count,
        cube_dims: spec.geometry.dims.as_array(),
        image_size: [spec.camera.height, spec.camera.width],
        classes: spec.scenes.classes.iter().map(|c| c.name.clone()).collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Internal(e.to_string()))?;
    fs::write(root.join("manifest.json"), text + "\n")?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

/// A scene read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub index: usize,
    pub cube: RadarCube,
    pub image: Tensor,
    pub boxes: Vec<GroundTruthBox>,
}

impl LoadedScene {
    pub fn load(root: &Path, index: usize) -> Result<Self> {
        let dir = scene_dir(root, index);
        let cube = read_cube(&dir.join("cube.bin"))?;
        let image = read_tensor(&dir.join("image.bin"))?;
        let boxes = parse_boxes(&fs::read_to_string(dir.join("boxes.txt"))?)?;
        Ok(LoadedScene {
            index,
            cube,
            image,
            boxes,
        })
    }
}
