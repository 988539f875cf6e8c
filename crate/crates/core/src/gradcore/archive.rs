//! Tensor archive: a flat little-endian container of named `f32` tensors.
//!
//! ```text
//! "FSTN" | version u16 | count u32 |
//!   { name_len u16 | name | rank u8 | extents u32×rank | dtype u8 (0 = f32) | payload }×count
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FSTN";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;

pub fn write_archive<W: Write>(mut out: W, tensors: &ParamSet<f32>) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors.iter() {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len()).map_err(|_| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "tensor name too long")
        })?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(bytes)?;
        out.write_all(&[t.rank() as u8])?;
        for &e in t.shape() {
            out.write_all(&(e as u32).to_le_bytes())?;
        }
        out.write_all(&[DTYPE_F32])?;
        let mut payload = Vec::with_capacity(t.numel() * 4);
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&payload)?;
    }
    out.flush()
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_archive<R: Read>(mut input: R, context: &str) -> Result<ParamSet<f32>> {
    let fmt = |m: String| Error::format(context, m);
    let io = |e: std::io::Error| Error::format(context, format!("truncated archive: {e}"));
    let magic: [u8; 4] = read_exact(&mut input).map_err(io)?;
    if &magic != MAGIC {
        return Err(fmt(format!("bad magic {magic:?}")));
    }
    let version = u16::from_le_bytes(read_exact(&mut input).map_err(io)?);
    if version != VERSION {
        return Err(fmt(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(read_exact(&mut input).map_err(io)?);
    let mut set = ParamSet::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(read_exact(&mut input).map_err(io)?) as usize;
        let mut name = vec![0u8; len];
        input.read_exact(&mut name).map_err(io)?;
        let name = String::from_utf8(name).map_err(|_| fmt("tensor name is not UTF-8".into()))?;
        let [rank] = read_exact(&mut input).map_err(io)?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(read_exact(&mut input).map_err(io)?) as usize);
        }
        let [dtype] = read_exact(&mut input).map_err(io)?;
        if dtype != DTYPE_F32 {
            return Err(fmt(format!("tensor {name}: unsupported dtype tag {dtype}")));
        }
        let n: usize = shape.iter().product();
        let mut payload = vec![0u8; n * 4];
        input.read_exact(&mut payload).map_err(io)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if set.contains(&name) {
            return Err(fmt(format!("duplicate tensor {name}")));
        }
        set.insert(name, Tensor::new(shape, data)?);
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest).map_err(io)? != 0 {
        return Err(fmt("trailing bytes after last tensor".into()));
    }
    Ok(set)
}

pub fn save_archive(path: &Path, tensors: &ParamSet<f32>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_archive(BufWriter::new(file), tensors).map_err(|e| Error::io(path, e))
}

pub fn load_archive(path: &Path) -> Result<ParamSet<f32>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_archive(BufReader::new(file), &path.display().to_string())
}
