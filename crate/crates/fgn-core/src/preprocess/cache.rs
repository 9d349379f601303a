//! Preprocessed sample cache: one file per clip so flow is computed once.
//! Layout: magic `CLP1` | label byte (0 = NonViolent, 1 = Violent) | four
//! u32 LE dims | raw 32-bit little-endian tensor values.

use super::{AugmentRecord, ClipSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::video::Label;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"CLP1";

pub fn write_sample(path: &Path, sample: &ClipSample) -> Result<()> {
    let shape = sample.data.shape();
    debug_assert_eq!(shape.len(), 4);
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[sample.label.class_index() as u8])?;
    for &d in shape {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in sample.data.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sample(path: &Path) -> Result<ClipSample> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 21];
    r.read_exact(&mut header)?;
    if &header[0..4] != MAGIC {
        return Err(Error::SampleCache(format!(
            "bad magic {:?} in {}",
            &header[0..4],
            path.display()
        )));
    }
    let label = Label::from_class_index(header[4] as usize)?;
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = u32::from_le_bytes(header[5 + i * 4..9 + i * 4].try_into().unwrap()) as usize;
    }
    let len: usize = dims.iter().product();
    if len == 0 || len > 500_000_000 {
        return Err(Error::SampleCache(format!("implausible dims {dims:?}")));
    }
    let mut raw = vec![0u8; len * 4];
    r.read_exact(&mut raw)?;
    let values = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(ClipSample {
        data: Tensor::new(dims.to_vec(), values)?,
        label,
        augmentation: AugmentRecord::identity(),
    })
}
