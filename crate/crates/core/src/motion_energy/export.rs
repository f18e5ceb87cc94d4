//! `MEM1` flat binary export of motion energy maps.
//!
//! Layout: magic `MEM1`, scale count, then C, H, W per scale (all u32 LE),
//! followed by the row-major f32 LE values of every scale in order.

use std::io::{Read, Write};

use ndarray::Array3;

use super::MotionEnergyMaps;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MEM1";

pub fn write_energy_maps<W: Write>(maps: &MotionEnergyMaps, mut out: W) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(maps.scales.len() as u32).to_le_bytes())?;
    for s in &maps.scales {
        let (c, h, w) = s.dim();
        for d in [c, h, w] {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
    }
    for s in &maps.scales {
        for v in s.iter() {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Truncated("MEM1 header".into()))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_energy_maps<R: Read>(mut input: R) -> Result<MotionEnergyMaps> {
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::Truncated("MEM1 magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad MEM1 magic {magic:?}")));
    }
    let n = read_u32(&mut input)? as usize;
    let mut dims = Vec::with_capacity(n);
    for _ in 0..n {
        dims.push((
            read_u32(&mut input)? as usize,
            read_u32(&mut input)? as usize,
            read_u32(&mut input)? as usize,
        ));
    }
    let mut scales = Vec::with_capacity(n);
    for (c, h, w) in dims {
        let mut buf = vec![0u8; c * h * w * 4];
        input
            .read_exact(&mut buf)
            .map_err(|_| Error::Truncated("MEM1 payload".into()))?;
        let vals: Vec<f64> = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        scales.push(Array3::from_shape_vec((c, h, w), vals).expect("sized buffer"));
    }
    Ok(MotionEnergyMaps { scales })
}
