//! `SEG1` checkpoints: magic, a JSON config echo, then named tensors stored
//! as little-endian f32.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use super::SegNetParams;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SEG1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub tensors: Vec<(String, ArrayD<f64>)>,
}

fn put_u32<W: Write>(out: &mut W, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| std::io::Error::other("length exceeds u32"))?;
    out.write_all(&v.to_le_bytes())
}

fn get_u32<R: Read>(input: &mut R, what: &str) -> Result<usize> {
    let mut b = [0u8; 4];
    input
        .read_exact(&mut b)
        .map_err(|_| Error::Truncated(format!("checkpoint {what}")))?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_bytes<R: Read>(input: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    input
        .take(n as u64)
        .read_to_end(&mut buf)
        .map_err(|_| Error::Truncated(format!("checkpoint {what}")))?;
    if buf.len() != n {
        return Err(Error::Truncated(format!("checkpoint {what}")));
    }
    Ok(buf)
}

impl Checkpoint {
    pub fn from_params(params: &SegNetParams, config: serde_json::Value) -> Self {
        Checkpoint {
            config,
            tensors: params
                .tensors()
                .into_iter()
                .map(|(n, t)| (n.to_string(), t.to_owned()))
                .collect(),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuild the head from the tensors named in [`PARAM_NAMES`].
    pub fn params(&self) -> Result<SegNetParams> {
        let in_w = self
            .tensor("in_w")
            .ok_or_else(|| Error::Format("checkpoint lacks in_w".into()))?;
        if in_w.ndim() != 2 {
            return Err(Error::Format("in_w must be 2-D".into()));
        }
        let mut params = SegNetParams::init(in_w.shape()[1], in_w.shape()[0], 0);
        for (name, mut dst) in params.tensors_mut() {
            let src = self
                .tensor(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
            if src.shape() != dst.shape() {
                return Err(Error::Format(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            dst.assign(src);
        }
        Ok(params)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        let cfg = serde_json::to_vec(&self.config)?;
        put_u32(&mut out, cfg.len())?;
        out.write_all(&cfg)?;
        put_u32(&mut out, self.tensors.len())?;
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len())?;
            out.write_all(name.as_bytes())?;
            put_u32(&mut out, t.ndim())?;
            for &d in t.shape() {
                put_u32(&mut out, d)?;
            }
            for &v in t.iter() {
                out.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let magic = get_bytes(&mut input, 4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!("not a SEG1 checkpoint (magic {magic:?})")));
        }
        let n = get_u32(&mut input, "config length")?;
        let config = serde_json::from_slice(&get_bytes(&mut input, n, "config")?)?;
        let count = get_u32(&mut input, "tensor count")?;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let n = get_u32(&mut input, "name length")?;
            let name = String::from_utf8(get_bytes(&mut input, n, "name")?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let ndim = get_u32(&mut input, "rank")?;
            let dims = (0..ndim)
                .map(|_| get_u32(&mut input, "dims"))
                .collect::<Result<Vec<_>>>()?;
            let len: usize = dims.iter().product();
            let raw = get_bytes(&mut input, len * 4, &name)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let t = ArrayD::from_shape_vec(IxDyn(&dims), data).expect("length matches dims");
            tensors.push((name, t));
        }
        Ok(Checkpoint { config, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(bytes.as_slice())
    }
}
