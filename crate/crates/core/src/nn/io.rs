//! Binary weight files.
//!
//! Layout, little-endian: `MEM0`, u16 version, u32 tensor count, then per
//! tensor a u16 name length, the UTF-8 name, a u8 rank, `rank` u32 dims and
//! the f32 payload. A CRC32 of every preceding byte closes the file.

use std::path::Path;

use super::{NnError, ParamStore, Tensor};

pub const WEIGHT_MAGIC: &[u8; 4] = b"MEM0";
pub const WEIGHT_VERSION: u16 = 1;

pub fn params_to_bytes(store: &ParamStore<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.scalar_count() * 4);
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.params() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.value.shape.len() as u8);
        for &d in &p.value.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in &p.value.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| NnError::Malformed(format!("unexpected end at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, NnError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Decode a weight file into a fresh store (registration order = file order).
pub fn params_from_bytes(bytes: &[u8]) -> Result<ParamStore<f32>, NnError> {
    if bytes.len() < 4 || &bytes[..4] != WEIGHT_MAGIC {
        return Err(NnError::BadMagic);
    }
    if bytes.len() < 14 {
        return Err(NnError::Malformed("file shorter than its header".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u16()?;
    if version != WEIGHT_VERSION {
        return Err(NnError::Version { found: version, expected: WEIGHT_VERSION });
    }
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
        return Err(NnError::Checksum);
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|e| NnError::Malformed(format!("parameter name: {e}")))?;
        let rank = r.take(1)?[0] as usize;
        if rank > 3 {
            return Err(NnError::ShapeTable { name: name.into(), problem: format!("rank {rank} exceeds 3") });
        }
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(n.checked_mul(4).ok_or_else(|| NnError::Malformed("tensor size overflow".into()))?)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        store.add(name, Tensor { shape, data })?;
    }
    if r.pos != body.len() {
        return Err(NnError::Malformed(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(store)
}

pub fn save_params(store: &ParamStore<f32>, path: &Path) -> Result<(), NnError> {
    std::fs::write(path, params_to_bytes(store))?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ParamStore<f32>, NnError> {
    params_from_bytes(&std::fs::read(path)?)
}

/// Load values into an existing architecture. Every parameter must be present
/// with the same shape, and the file may not carry extra tensors.
pub fn load_params_into(store: &mut ParamStore<f32>, path: &Path) -> Result<(), NnError> {
    let loaded = load_params(path)?;
    copy_matching(store, &loaded)
}

pub fn copy_matching(store: &mut ParamStore<f32>, loaded: &ParamStore<f32>) -> Result<(), NnError> {
    for p in loaded.params() {
        if store.id(&p.name).is_none() {
            return Err(NnError::ShapeTable { name: p.name.clone(), problem: "not part of this architecture".into() });
        }
    }
    for i in 0..store.len() {
        let name = store.params()[i].name.clone();
        let src = loaded
            .id(&name)
            .map(|id| &loaded.params()[id.0])
            .ok_or_else(|| NnError::ShapeTable { name: name.clone(), problem: "missing from weight file".into() })?;
        let dst = &store.params()[i];
        if src.value.shape != dst.value.shape {
            return Err(NnError::ShapeTable {
                name,
                problem: format!("shape {:?} in file, {:?} expected", src.value.shape, dst.value.shape),
            });
        }
        let data = src.value.data.clone();
        store.value_mut(super::ParamId(i)).copy_from_slice(&data);
    }
    Ok(())
}
