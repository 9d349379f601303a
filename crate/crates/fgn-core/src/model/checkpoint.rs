//! Checkpoint serialization.
//!
//! Layout: magic `FGN1` | variant tag (u8) | tensor count (u64 LE) | per
//! tensor: name length (u64 LE), UTF-8 name bytes, rank (u64 LE), dims
//! (u64 LE each), then raw 32-bit little-endian values in row-major order.
//! Round-trips are bit-exact at 32-bit precision.

use super::{build_model_with, FlowGatedModel, ModelTopology, ModelVariant};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"FGN1";

pub fn save_model(model: &FlowGatedModel<f32>, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    model.visit_params(|name, t| tensors.push((name.to_string(), t.clone())));

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[model.variant().tag()])?;
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for (name, tensor) in &tensors {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u64).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(tensor.rank() as u64).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in tensor.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Reads the raw (variant, named tensors) contents of a checkpoint.
pub fn read_checkpoint(path: &Path) -> Result<(ModelVariant, Vec<(String, Tensor<f32>)>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let variant = ModelVariant::from_tag(tag[0])?;
    let count = read_u64(&mut r)? as usize;
    if count > 10_000 {
        return Err(Error::Checkpoint(format!("implausible tensor count {count}")));
    }

    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u64(&mut r)? as usize;
        if name_len > 4096 {
            return Err(Error::Checkpoint(format!("implausible name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| Error::Checkpoint(format!("tensor name is not UTF-8: {e}")))?;
        let rank = read_u64(&mut r)? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Checkpoint(format!("implausible rank {rank} for {name}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u64(&mut r)? as usize);
        }
        let len: usize = dims.iter().product();
        if len > 100_000_000 {
            return Err(Error::Checkpoint(format!("implausible size {len} for {name}")));
        }
        let mut raw = vec![0u8; len * 4];
        r.read_exact(&mut raw)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push((name, Tensor::new(dims, values)?));
    }
    Ok((variant, tensors))
}

/// Rebuilds the model structure and fills every parameter from the file.
/// All names must match the variant's parameter set exactly, with matching
/// dims.
pub fn load_model(path: &Path, topology: ModelTopology) -> Result<FlowGatedModel<f32>> {
    let (variant, tensors) = read_checkpoint(path)?;
    let mut by_name: BTreeMap<String, Tensor<f32>> = tensors.into_iter().collect();
    let mut model = build_model_with::<f32>(variant, 0, topology)?;

    let mut error = None;
    model.visit_params_mut(|name, param| {
        if error.is_some() {
            return;
        }
        match by_name.remove(name) {
            Some(stored) if stored.shape() == param.shape() => *param = stored,
            Some(stored) => {
                error = Some(Error::Checkpoint(format!(
                    "tensor {name} has dims {:?}, expected {:?}",
                    stored.shape(),
                    param.shape()
                )));
            }
            None => error = Some(Error::Checkpoint(format!("missing tensor {name}"))),
        }
    });
    if let Some(e) = error {
        return Err(e);
    }
    if let Some((name, _)) = by_name.into_iter().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
    }
    Ok(model)
}
