//! Parameter checkpoints.
//!
//! Layout (little-endian): magic `WRCF`, version `u32`, parameter count
//! `u32`, then per parameter: name length `u32`, UTF-8 name, rank `u32`,
//! `rank` dimensions as `u64`, and the `f64` payload.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{numel_of, Module};
use crate::binio::{put_f64s, put_u32, put_u64, ByteReader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"WRCF";
const VERSION: u32 = 1;

/// One stored tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn write_checkpoint(module: &dyn Module) -> Vec<u8> {
    let params = module.parameters();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_u32(&mut buf, params.len() as u32);
    for p in params {
        let t = p.tensor();
        put_u32(&mut buf, p.name().len() as u32);
        buf.extend_from_slice(p.name().as_bytes());
        put_u32(&mut buf, t.rank() as u32);
        for &d in t.shape() {
            put_u64(&mut buf, d as u64);
        }
        put_f64s(&mut buf, t.data());
    }
    buf
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Vec<StoredTensor>> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(MAGIC)?;
    r.expect_version(VERSION)?;
    let count = r.u32("parameter count")?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let at = r.offset();
        let name = String::from_utf8(r.take(len, "name")?.to_vec())
            .map_err(|_| Error::format(at, "parameter name is not UTF-8"))?;
        let rank = r.u32("rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u64("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let data = r.f64s(numel_of(&shape), "payload")?;
        out.push(StoredTensor { name, shape, data });
    }
    r.finish()?;
    Ok(out)
}

pub fn save_checkpoint(path: &Path, module: &dyn Module) -> Result<()> {
    fs::write(path, write_checkpoint(module))?;
    Ok(())
}

/// Loads a checkpoint into `module`, requiring an exact name and shape match.
pub fn load_checkpoint(path: &Path, module: &dyn Module) -> Result<()> {
    let stored = read_checkpoint(&fs::read(path)?)?;
    assign(&stored, module)
}

pub(crate) fn assign(stored: &[StoredTensor], module: &dyn Module) -> Result<()> {
    let by_name: HashMap<&str, &StoredTensor> = stored.iter().map(|s| (s.name.as_str(), s)).collect();
    let params = module.parameters();
    let mut problems = Vec::new();
    for p in &params {
        match by_name.get(p.name()) {
            None => problems.push(format!("{} missing from checkpoint (model shape {:?})", p.name(), p.shape())),
            Some(s) if s.shape != p.shape() => problems.push(format!(
                "{} has shape {:?} in checkpoint but {:?} in model",
                p.name(),
                s.shape,
                p.shape()
            )),
            Some(_) => {}
        }
    }
    let known: std::collections::HashSet<&str> = params.iter().map(|p| p.name()).collect();
    for s in stored {
        if !known.contains(s.name.as_str()) {
            problems.push(format!("{} (shape {:?}) not present in model", s.name, s.shape));
        }
    }
    if !problems.is_empty() {
        return Err(Error::config(format!(
            "checkpoint does not match model configuration: {}",
            problems.join("; ")
        )));
    }
    for p in params {
        p.set_data(by_name[p.name()].data.clone())?;
    }
    Ok(())
}
