//! Little-endian tensor container.
//!
//! ```text
//! "IRCN" | version: u32 | count: u32
//! per tensor: name_len: u32 | name (UTF-8) | rank: u32 | dims: u32 * rank | data: f32 * prod(dims)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"IRCN";
pub const VERSION: u32 = 1;

/// Ordered list of named tensors.
pub type NamedTensors = Vec<(String, Tensor<f32>)>;

pub fn encode(tensors: &[(String, Tensor<f32>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.buf.len() {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn decode_inner(buf: &[u8]) -> std::result::Result<(NamedTensors, usize), String> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|e| format!("tensor name is not UTF-8: {e}"))?
            .to_string();
        let rank = c.u32()? as usize;
        let dims = (0..rank)
            .map(|_| c.u32().map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let n: usize = dims.iter().product();
        let raw = c.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::from_vec(&dims, data).map_err(|e| e.to_string())?;
        out.push((name, t));
    }
    Ok((out, c.pos))
}

/// Decodes a container that may be followed by trailing bytes; returns the
/// tensors and the number of bytes consumed.
pub fn decode_prefix(buf: &[u8], origin: &Path) -> Result<(NamedTensors, usize)> {
    decode_inner(buf).map_err(|d| Error::format(origin, d))
}

pub fn decode(buf: &[u8], origin: &Path) -> Result<NamedTensors> {
    let (tensors, used) = decode_prefix(buf, origin)?;
    if used != buf.len() {
        return Err(Error::format(origin, format!("{} trailing bytes", buf.len() - used)));
    }
    Ok(tensors)
}

pub fn save(path: &Path, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(&encode(tensors)).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<NamedTensors> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    BufReader::new(f)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    decode(&buf, path)
}

/// Looks up a tensor by name.
pub fn find<'a>(tensors: &'a [(String, Tensor<f32>)], name: &str) -> Option<&'a Tensor<f32>> {
    tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
}
