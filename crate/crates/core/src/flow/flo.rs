//! Middlebury `.flo`: f32 magic 202021.25 ("PIEH"), i32 width, i32 height,
//! then row-major interleaved (u, v) f32, all little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::FlowField;
use crate::error::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;

pub fn write_flo_to<W: Write>(field: &FlowField, mut out: W) -> std::io::Result<()> {
    out.write_all(&FLO_MAGIC.to_le_bytes())?;
    out.write_all(&(field.width() as i32).to_le_bytes())?;
    out.write_all(&(field.height() as i32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(field.u.len() * 8);
    for (u, v) in field.u.iter().zip(field.v.iter()) {
        buf.extend_from_slice(&u.to_le_bytes());
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn write_flo(field: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_flo_to(field, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_flo_from<R: Read>(mut input: R) -> Result<FlowField> {
    let mut head = [0u8; 12];
    input
        .read_exact(&mut head)
        .map_err(|_| Error::Truncated(".flo header".into()))?;
    let magic = f32::from_le_bytes(head[0..4].try_into().expect("4 bytes"));
    if magic != FLO_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let width = i32::from_le_bytes(head[4..8].try_into().expect("4 bytes")) as i64;
    let height = i32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as i64;
    if width <= 0 || height <= 0 {
        return Err(Error::BadDims { width, height });
    }
    let (w, h) = (width as usize, height as usize);
    let mut payload = vec![0u8; w * h * 8];
    input
        .read_exact(&mut payload)
        .map_err(|_| Error::Truncated(format!(".flo payload for {w}x{h}")))?;
    let mut u = Array2::zeros((h, w));
    let mut v = Array2::zeros((h, w));
    for (i, chunk) in payload.chunks_exact(8).enumerate() {
        let (y, x) = (i / w, i % w);
        u[[y, x]] = f32::from_le_bytes(chunk[0..4].try_into().expect("4 bytes"));
        v[[y, x]] = f32::from_le_bytes(chunk[4..8].try_into().expect("4 bytes"));
    }
    Ok(FlowField { u, v })
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_flo_from(BufReader::new(file))
}
