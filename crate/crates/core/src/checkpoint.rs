//! Portable parameter checkpoints.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic        8 bytes  "QDQNCKPT"
//! version      u32      1
//! variant      u32      0 = quantum, 1 = classical
//! seed         u64
//! segments     u32      number of parameter blocks
//! per block:   u32 rank, then `rank` × u32 dims
//! count        u64      total number of parameters
//! values       count × f64
//! ```
//!
//! Blocks appear in flat-vector order and each block is row-major.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::{layout, ModelParams, Variant};

pub const MAGIC: &[u8; 8] = b"QDQNCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub seed: u64,
}

fn io_err(e: std::io::Error) -> Error {
    Error::Checkpoint(e.to_string())
}

pub fn write<W: Write>(mut w: W, params: &ModelParams, seed: u64) -> Result<()> {
    let segments = layout(params.variant());
    let mut buf = Vec::with_capacity(64 + 8 * params.param_count());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&params.variant().tag().to_le_bytes());
    buf.extend_from_slice(&seed.to_le_bytes());
    buf.extend_from_slice(&(segments.len() as u32).to_le_bytes());
    for seg in &segments {
        buf.extend_from_slice(&(seg.shape.len() as u32).to_le_bytes());
        for &d in &seg.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    buf.extend_from_slice(&(params.param_count() as u64).to_le_bytes());
    for v in params.flat_view() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(io_err)
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(io_err)?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
}

pub fn read<R: Read>(r: R) -> Result<Checkpoint> {
    let mut r = Reader { inner: r };
    if &r.bytes::<8>()? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let tag = r.u32()?;
    let variant = Variant::from_tag(tag)
        .ok_or_else(|| Error::Checkpoint(format!("unknown variant tag {tag}")))?;
    let seed = r.u64()?;

    let expected = layout(variant);
    let n_segments = r.u32()? as usize;
    if n_segments != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{n_segments} blocks, {variant:?} model has {}",
            expected.len()
        )));
    }
    for seg in &expected {
        let rank = r.u32()? as usize;
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if dims != seg.shape {
            return Err(Error::Checkpoint(format!(
                "block {} has shape {dims:?}, expected {:?}",
                seg.name, seg.shape
            )));
        }
    }
    let count = r.u64()? as usize;
    let values = (0..count)
        .map(|_| Ok(f64::from_le_bytes(r.bytes()?)))
        .collect::<Result<Vec<_>>>()?;
    let params = ModelParams::from_flat(variant, values)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(Checkpoint { params, seed })
}
