//! SGT1 binary tensor format.
//!
//! ```text
//! b"SGT1" | rank: u32 LE | rank × extent: u32 LE | product(extents) × f64 LE
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const SGT_MAGIC: &[u8; 4] = b"SGT1";

const MAX_RANK: u32 = 16;

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(SGT_MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &e in t.shape() {
        let e = u32::try_from(e).map_err(|_| Error::dim(format!("extent {e} exceeds u32")))?;
        w.write_all(&e.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated(format!("unexpected end of data while reading {what}"))
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_truncated(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(r, &mut magic, "magic")?;
    if &magic != SGT_MAGIC {
        return Err(Error::Magic {
            expected: "SGT1".into(),
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let rank = read_u32(r, "rank")?;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::dim(format!("invalid tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        shape.push(read_u32(r, "extent")? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::dim(format!("shape {shape:?} overflows")))?;
    let mut bytes = vec![0u8; n * 8];
    read_exact_or_truncated(r, &mut bytes, "tensor data")?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    read_tensor(&mut r)
}
