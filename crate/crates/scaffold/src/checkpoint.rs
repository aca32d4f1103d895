//! Binary checkpoints.
//!
//! Layout, little-endian:
//! `b"SCFDCKPT"`, `u32` format version, `u64` metadata length, metadata as
//! JSON, `u32` parameter count, then per parameter: `u32` name length, name
//! bytes, `u32` rank, `u64` per dimension, `f64` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use scaffold_core::model::{Model, ModelSpec};
use scaffold_core::tensor::{ParamStore, Tensor};
use scaffold_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

const MAGIC: &[u8; 8] = b"SCFDCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub spec: ModelSpec,
    pub train: TrainConfig,
    /// Epoch the parameters come from (1-based).
    pub epoch: usize,
    pub dev_metric: Option<f64>,
}

pub fn write_to(mut w: impl Write, meta: &Metadata, params: &ParamStore) -> std::io::Result<()> {
    let meta = serde_json::to_vec(meta).map_err(std::io::Error::other)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(meta.len() as u64).to_le_bytes())?;
    w.write_all(&meta)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (_, p) in params.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        let shape = p.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in p.value.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save(path: &Path, meta: &Metadata, params: &ParamStore) -> Result<()> {
    let file = File::create(path).map_err(|e| AppError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_to(&mut w, meta, params).and_then(|_| w.flush()).map_err(|e| AppError::io(path, e))
}

fn u32_from(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn u64_from(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Raw contents: metadata and named tensors in file order.
pub fn read_from(mut r: impl Read) -> Result<(Metadata, Vec<(String, Tensor)>)> {
    let bad = |e: std::io::Error| AppError::Data(format!("truncated or unreadable checkpoint: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(bad)?;
    if &magic != MAGIC {
        return Err(AppError::Data("not a checkpoint file".into()));
    }
    let version = u32_from(&mut r).map_err(bad)?;
    if version != VERSION {
        return Err(AppError::Data(format!("checkpoint format version {version} is not supported (expected {VERSION})")));
    }
    let len = u64_from(&mut r).map_err(bad)? as usize;
    let mut meta = vec![0u8; len];
    r.read_exact(&mut meta).map_err(bad)?;
    let meta: Metadata = serde_json::from_slice(&meta).map_err(|e| AppError::Data(format!("checkpoint metadata: {e}")))?;
    let count = u32_from(&mut r).map_err(bad)?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let n = u32_from(&mut r).map_err(bad)? as usize;
        let mut name = vec![0u8; n];
        r.read_exact(&mut name).map_err(bad)?;
        let name = String::from_utf8(name).map_err(|e| AppError::Data(e.to_string()))?;
        let rank = u32_from(&mut r).map_err(bad)?;
        let shape = (0..rank).map(|_| u64_from(&mut r).map(|d| d as usize)).collect::<std::io::Result<Vec<_>>>().map_err(bad)?;
        let size: usize = shape.iter().product();
        let data = (0..size).map(|_| u64_from(&mut r).map(f64::from_bits)).collect::<std::io::Result<Vec<_>>>().map_err(bad)?;
        tensors.push((name, Tensor::new(shape, data).map_err(scaffold_core::Error::from)?));
    }
    Ok((meta, tensors))
}

/// Rebuilds the model described by the metadata and fills in its
/// parameters. Every parameter must be present with the expected shape.
pub fn load(path: &Path) -> Result<(Metadata, Model, ParamStore)> {
    let file = File::open(path).map_err(|e| AppError::io(path, e))?;
    let (meta, tensors) = read_from(BufReader::new(file))?;
    let (model, params) = restore(&meta, tensors)?;
    Ok((meta, model, params))
}

pub fn restore(meta: &Metadata, tensors: Vec<(String, Tensor)>) -> Result<(Model, ParamStore)> {
    let spec = meta.spec.clone();
    let words = Tensor::zeros(&[spec.vocab.len(), spec.encoder.word_dim]);
    let mut params = ParamStore::new();
    let model = Model::build(spec, words, &mut params, &mut scaffold_core::rng_from_seed(0))?;
    if tensors.len() != params.len() {
        return Err(AppError::Data(format!("checkpoint has {} parameters, model expects {}", tensors.len(), params.len())));
    }
    for (name, t) in tensors {
        let id = params.find(&name).ok_or_else(|| AppError::Data(format!("unexpected parameter `{name}` in checkpoint")))?;
        let slot = params.value_mut(id);
        if slot.shape() != t.shape() {
            return Err(AppError::Data(format!("parameter `{name}` has shape {:?}, expected {:?}", t.shape(), slot.shape())));
        }
        *slot = t;
    }
    Ok((model, params))
}
