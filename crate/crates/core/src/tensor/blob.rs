//! Weight blob encoding.
//!
//! A blob holds one parameter set: `u32 count`, then for each tensor
//! `u32 rank`, `rank × u32 dims` and the row-major data as little-endian
//! `f32`.

use super::Tensor;
use crate::error::ArchiveError;

pub fn encode(tensors: &[&Tensor<f32>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl Reader<'_> {
    fn take4(&mut self) -> Result<[u8; 4], ArchiveError> {
        let end = self.pos + 4;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| ArchiveError::Truncated(self.name.to_string()))?;
        self.pos = end;
        Ok([chunk[0], chunk[1], chunk[2], chunk[3]])
    }

    fn u32(&mut self) -> Result<u32, ArchiveError> {
        Ok(u32::from_le_bytes(self.take4()?))
    }
}

pub fn decode(bytes: &[u8], name: &str) -> Result<Vec<Tensor<f32>>, ArchiveError> {
    let mut r = Reader {
        bytes,
        pos: 0,
        name,
    };
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let rank = r.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(ArchiveError::Invalid(format!("{name}: bad tensor rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        if r.pos + 4 * n > bytes.len() {
            return Err(ArchiveError::Truncated(name.to_string()));
        }
        let data = (0..n)
            .map(|_| r.take4().map(f32::from_le_bytes))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(ArchiveError::Invalid(format!("{name}: trailing bytes")));
    }
    Ok(out)
}
