//! Parameter checkpoints.
//!
//! Little-endian layout: `b"MCEW"`, format version `u32`, tensor count
//! `u32`, then per tensor: name byte length `u32`, UTF-8 name, rank `u32`,
//! `rank` extents as `u32`, and the `f32` data.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{Parameterized, Real, Tensor};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MCEW";
pub const VERSION: u32 = 1;

pub fn encode<T: Real, M: Parameterized<T> + ?Sized>(model: &M) -> Vec<u8> {
    let mut entries: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    model.visit(&mut |p| {
        entries.push((
            p.name.clone(),
            p.tensor.shape().to_vec(),
            p.tensor
                .data()
                .iter()
                .map(|v| v.to_f32().unwrap_or(f32::NAN))
                .collect(),
        ))
    });
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, shape, data) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for e in shape {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save<T: Real, M: Parameterized<T> + ?Sized>(path: &Path, model: &M) -> Result<()> {
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

/// Parses a checkpoint into `(name, tensor)` pairs in file order.
pub fn decode(bytes: &[u8]) -> std::result::Result<Vec<(String, Tensor<f32>)>, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| "name is not UTF-8")?;
        let rank = r.u32()?;
        let shape = (0..rank)
            .map(|_| r.u32())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| e.to_string())?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err("trailing bytes".into());
    }
    Ok(out)
}

/// Overwrites every parameter of `model` from the checkpoint at `path`.
/// Names and shapes must match exactly; `requires_grad` flags are kept.
pub fn load_into<T: Real, M: Parameterized<T> + ?Sized>(path: &Path, model: &mut M) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let entries = decode(&bytes).map_err(|r| Error::format(path, r))?;
    let expected = model.param_names();
    if entries.len() != expected.len() {
        return Err(Error::format(
            path,
            format!(
                "checkpoint has {} tensors, model has {}",
                entries.len(),
                expected.len()
            ),
        ));
    }
    let mut by_name: HashMap<String, Tensor<f32>> = entries.into_iter().collect();
    let mut result = Ok(());
    model.visit_mut(&mut |p| {
        if result.is_err() {
            return;
        }
        match by_name.remove(&p.name) {
            None => result = Err(Error::format(path, format!("missing tensor {}", p.name))),
            Some(t) if t.shape() != p.tensor.shape() => {
                result = Err(Error::format(
                    path,
                    format!(
                        "tensor {} has shape {:?}, model expects {:?}",
                        p.name,
                        t.shape(),
                        p.tensor.shape()
                    ),
                ))
            }
            Some(t) => {
                for (dst, &src) in p.tensor.data_mut().iter_mut().zip(t.data()) {
                    *dst = T::from(src).expect("f32 converts");
                }
                p.tensor.zero_grad();
            }
        }
    });
    result
}
