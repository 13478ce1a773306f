//! Binary cube and tensor files, and the plain-text box list.
//!
//! Cube files: magic `WRCC`, version `u32`, four `u64` dimensions, the four
//! coordinate arrays, then the amplitude payload, all little-endian `f64`.
//! Tensor files: magic `WRCT`, version `u32`, rank `u32`, `u64` dimensions,
//! payload.

use std::fs;
use std::path::Path;

use super::RadarCube;
use crate::binio::{put_f64s, put_u32, put_u64, ByteReader};
use crate::detection::{Box3D, GroundTruthBox};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const CUBE_MAGIC: &[u8; 4] = b"WRCC";
const CUBE_VERSION: u32 = 1;
const TENSOR_MAGIC: &[u8; 4] = b"WRCT";
const TENSOR_VERSION: u32 = 1;

pub fn encode_cube(cube: &RadarCube) -> Vec<u8> {
    let dims = cube.dims().as_array();
    let mut buf = Vec::with_capacity(8 * (cube.amp.numel() + dims.iter().sum::<usize>()) + 40);
    buf.extend_from_slice(CUBE_MAGIC);
    put_u32(&mut buf, CUBE_VERSION);
    for d in dims {
        put_u64(&mut buf, d as u64);
    }
    for axis in [&cube.range_m, &cube.azimuth_rad, &cube.elevation_rad, &cube.doppler_mps] {
        put_f64s(&mut buf, axis);
    }
    put_f64s(&mut buf, cube.amp.data());
    buf
}

pub fn decode_cube(bytes: &[u8]) -> Result<RadarCube> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(CUBE_MAGIC)?;
    r.expect_version(CUBE_VERSION)?;
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        *d = r.u64("cube dimension")? as usize;
    }
    let range = r.f64s(dims[0], "range axis")?;
    let azimuth = r.f64s(dims[1], "azimuth axis")?;
    let elevation = r.f64s(dims[2], "elevation axis")?;
    let doppler = r.f64s(dims[3], "doppler axis")?;
    let payload_at = r.offset();
    let amp = r.f64s(dims.iter().product(), "amplitudes")?;
    r.finish()?;
    RadarCube::new(Tensor::from_vec(&dims, amp), range, azimuth, elevation, doppler)
        .map_err(|e| Error::format(payload_at, format!("invalid cube contents: {e}")))
}

pub fn write_cube(path: &Path, cube: &RadarCube) -> Result<()> {
    fs::write(path, encode_cube(cube))?;
    Ok(())
}

pub fn read_cube(path: &Path) -> Result<RadarCube> {
    decode_cube(&fs::read(path)?)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(8 * t.numel() + 16 + 8 * t.rank());
    buf.extend_from_slice(TENSOR_MAGIC);
    put_u32(&mut buf, TENSOR_VERSION);
    put_u32(&mut buf, t.rank() as u32);
    for &d in t.shape() {
        put_u64(&mut buf, d as u64);
    }
    put_f64s(&mut buf, t.data());
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader::new(&bytes);
    r.expect_magic(TENSOR_MAGIC)?;
    r.expect_version(TENSOR_VERSION)?;
    let rank = r.u32("rank")? as usize;
    let shape = (0..rank)
        .map(|_| r.u64("dimension").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let data = r.f64s(shape.iter().product(), "payload")?;
    r.finish()?;
    Tensor::new(&shape, data)
}

/// One line per box: `class x y z w l h yaw vr`.
pub fn format_boxes(boxes: &[GroundTruthBox]) -> String {
    let mut out = String::new();
    for g in boxes {
        let b = &g.bbox;
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {} {}\n",
            g.class, b.x, b.y, b.z, b.w, b.l, b.h, b.yaw, g.radial_velocity
        ));
    }
    out
}

pub fn parse_boxes(text: &str) -> Result<Vec<GroundTruthBox>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let at = offset;
        offset += line.len() as u64;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 9 {
            return Err(Error::format(at, format!("box line has {} fields, expected 9", fields.len())));
        }
        let class = fields[0]
            .parse::<usize>()
            .map_err(|_| Error::format(at, format!("bad class id {:?}", fields[0])))?;
        let mut v = [0.0; 8];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse::<f64>().map_err(|_| Error::format(at, format!("bad number {f:?}")))?;
        }
        out.push(GroundTruthBox {
            class,
            bbox: Box3D::new([v[0], v[1], v[2]], [v[3], v[4], v[5]], v[6]),
            radial_velocity: v[7],
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar::RadarGeometry;
    use rand::{Rng, SeedableRng};

    fn random_cube() -> RadarCube {
        let g = RadarGeometry::default();
        let mut c = RadarCube::zeros(&g);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        c.amp = Tensor::from_vec(&g.dims.as_array(), (0..g.dims.cells()).map(|_| rng.random::<f64>()).collect());
        c
    }

    #[test]
    fn cube_round_trip_is_bit_identical() {
        let c = random_cube();
        let back = decode_cube(&encode_cube(&c)).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&c.amp), bits(&back.amp));
        assert_eq!(c.doppler_mps, back.doppler_mps);
    }

    #[test]
    fn truncated_cube_is_format_error() {
        let bytes = encode_cube(&random_cube());
        assert!(matches!(decode_cube(&bytes[..bytes.len() - 5]), Err(Error::Format { .. })));
        assert!(matches!(decode_cube(&bytes[..10]), Err(Error::Format { .. })));
    }

    #[test]
    fn version_mismatch_names_both() {
        let mut bytes = encode_cube(&random_cube());
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        let err = decode_cube(&bytes).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Format { offset: 4, .. }));
        assert!(msg.contains('7') && msg.contains('1'), "{msg}");
    }

    #[test]
    fn boxes_round_trip() {
        let boxes = vec![GroundTruthBox {
            class: 1,
            bbox: Box3D::new([12.5, -3.25, -0.1], [2.6, 8.0, 3.2], 0.125),
            radial_velocity: -2.5,
        }];
        assert_eq!(parse_boxes(&format_boxes(&boxes)).unwrap(), boxes);
        assert!(parse_boxes("0 1 2\n").is_err());
    }

    #[test]
    fn tensor_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        let t = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, -0.5]);
        write_tensor(&p, &t).unwrap();
        let back = read_tensor(&p).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(back.data(), t.data());
    }
}
