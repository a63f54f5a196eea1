//! `LFMM` parameter container (little-endian):
//!
//! ```text
//! "LFMM" | version u32 | schema hash [32] | meta length u32 | meta JSON
//!        | param count u32 | { name length u16 | name | rows u32 | cols u32 | rows·cols f64 }*
//! ```
//!
//! Parameters are written in lexicographic name order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nncore::{Matrix, ParamStore};

pub const MAGIC: &[u8; 4] = b"LFMM";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub schema_hash: [u8; 32],
    /// Model description needed to rebuild the architecture.
    pub meta: serde_json::Value,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.schema_hash);
        let meta = serde_json::to_vec(&self.meta).expect("json value serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, m) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format(0, "missing LFMM magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
        }
        let schema_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let meta_len = r.u32()? as usize;
        let at = r.pos as u64;
        let meta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::format(at, format!("bad meta: {e}")))?;
        let n = r.u32()?;
        let mut params = ParamStore::new();
        let mut last: Option<String> = None;
        for _ in 0..n {
            let at = r.pos as u64;
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(at, "parameter name is not utf-8"))?
                .to_string();
            if last.as_ref().is_some_and(|l| *l >= name) {
                return Err(Error::format(at, format!("parameter `{name}` out of order")));
            }
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let raw = r.take(rows.checked_mul(cols).and_then(|c| c.checked_mul(8)).ok_or_else(|| Error::format(at, "shape overflow"))?)?;
            let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let m = Matrix::from_vec(rows, cols, data).map_err(|e| Error::format(at, e.to_string()))?;
            params.insert(name.clone(), m)?;
            last = Some(name);
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos as u64, "trailing bytes after parameters"));
        }
        Ok(Checkpoint {
            schema_hash,
            meta,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        Checkpoint::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn expect_schema(&self, hash: &[u8; 32]) -> Result<()> {
        if &self.schema_hash != hash {
            return Err(Error::Schema("checkpoint was written for a different feature schema".into()));
        }
        Ok(())
    }

    /// Deserializes one field of the meta object.
    pub fn meta_field<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::format(0, format!("checkpoint meta lacks `{key}`")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::format(0, format!("meta `{key}`: {e}")))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.pos as u64, format!("truncated: need {n} bytes")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
}
