//! Flat binary checkpoints: magic, version, tensor shapes, little-endian
//! f64 payloads.
//!
//! Layout: `b"SOBC"`, `u32` version (= 1), `u32` tensor count, then per
//! tensor `u32` rank followed by `u32` dims, then all payloads back to back
//! as little-endian `f64`.

use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Result, SobolevError};

const MAGIC: &[u8; 4] = b"SOBC";
const VERSION: u32 = 1;

pub fn write_checkpoint(path: &Path, tensors: &[Tensor]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        f.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for d in &t.shape {
            f.write_all(&(*d as u32).to_le_bytes())?;
        }
    }
    for t in tensors {
        for v in &t.data {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<Tensor>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(SobolevError::Config(format!(
            "not a checkpoint file: bad magic {magic:?}"
        )));
    }
    let version = read_u32(&mut f)?;
    if version != VERSION {
        return Err(SobolevError::Config(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = read_u32(&mut f)? as usize;
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = read_u32(&mut f)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut f)? as usize);
        }
        shapes.push(shape);
    }
    let mut out = Vec::with_capacity(count);
    for shape in shapes {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            f.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        out.push(Tensor::new(data, shape)?);
    }
    Ok(out)
}

fn read_u32(f: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    f.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
