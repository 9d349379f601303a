//! Debug dump of a flow field: 16-byte header (magic `FLO1`, u32 LE width,
//! u32 LE height, u32 reserved) followed by the u plane then the v plane as
//! raw 32-bit little-endian rasters.

use super::FlowField;
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"FLO1";

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(flow.width as u32).to_le_bytes())?;
    w.write_all(&(flow.height as u32).to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    for plane in [&flow.u, &flow.v] {
        for &x in plane {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[0..4] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad flow magic {:?}, expected {MAGIC:?}",
            &header[0..4]
        )));
    }
    let width = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let n = width * height;
    if n == 0 || n > 100_000_000 {
        return Err(Error::Checkpoint(format!("implausible flow size {width}x{height}")));
    }
    let mut raw = vec![0u8; n * 8];
    r.read_exact(&mut raw)?;
    let floats: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(FlowField {
        width,
        height,
        u: floats[..n].to_vec(),
        v: floats[n..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.flo");
        let mut flow = FlowField::zeros(7, 5);
        for (i, (u, v)) in flow.u.iter_mut().zip(flow.v.iter_mut()).enumerate() {
            *u = (i as f32).sin();
            *v = -(i as f32).cos();
        }
        write_flow(&path, &flow).unwrap();
        let back = read_flow(&path).unwrap();
        assert_eq!((back.width, back.height), (7, 5));
        let same = flow
            .u
            .iter()
            .chain(&flow.v)
            .zip(back.u.iter().chain(&back.v))
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same);
    }
}
