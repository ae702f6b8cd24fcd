//! Named parameter storage and the `HGVAE1` checkpoint container.
//!
//! Layout, little-endian: magic `HGVAE1`, u32 tensor count, then per tensor
//! u16 name length, name bytes, u8 rank, u32 dims, f32 data row-major.

use std::collections::HashMap;

use super::{AutodiffError, ParamId, Tensor};

const MAGIC: &[u8; 6] = b"HGVAE1";

/// Parameters in insertion order, addressable by [`ParamId`] or name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<ParamId, AutodiffError> {
        if self.index.contains_key(name) {
            return Err(AutodiffError::Checkpoint(format!("duplicate parameter {name:?}")));
        }
        if name.len() > u16::MAX as usize {
            return Err(AutodiffError::Checkpoint("parameter name too long".into()));
        }
        let id = self.tensors.len();
        self.index.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.tensors.push(t);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Overwrites every parameter from `entries`, which must contain each
    /// name exactly once with a matching shape. Extra entries are ignored.
    pub fn load(&mut self, entries: &[(String, Tensor)]) -> Result<(), AutodiffError> {
        let by_name: HashMap<&str, &Tensor> = entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for (name, slot) in self.names.iter().zip(self.tensors.iter_mut()) {
            let t = by_name
                .get(name.as_str())
                .ok_or_else(|| AutodiffError::Checkpoint(format!("missing tensor {name:?}")))?;
            if t.shape() != slot.shape() {
                return Err(AutodiffError::Checkpoint(format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = (*t).clone();
        }
        Ok(())
    }
}

pub fn write_checkpoint(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
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
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AutodiffError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            AutodiffError::Checkpoint(format!("truncated at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, AutodiffError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, AutodiffError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, AutodiffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, AutodiffError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(AutodiffError::Checkpoint("bad magic".into()));
    }
    let count = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| AutodiffError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| AutodiffError::Checkpoint(format!("tensor {name:?} is too large")))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| {
            AutodiffError::Checkpoint(format!("tensor {name:?} is too large"))
        })?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(AutodiffError::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}
