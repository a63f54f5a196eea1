//! Append-only keyed store of quantized embeddings and its `LFSQ` file format.
//!
//! Layout (little-endian):
//!
//! ```text
//! header  : "LFSQ" | version u32 | dim u32 | codec descriptor | record count u64
//! codec   : id u8 (0 fp32, 1 int8, 2 int4, 3 int4 k-means) [| 16 x f64 centers if id = 3]
//! record  : key u64 | timestamp i64 | soft flag u8 | [soft label f64] | payload | crc32 u32
//! ```
//!
//! The CRC covers every byte of the record before it. Records are written
//! sorted by (key, timestamp, insertion order).

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quantization::{Codec, QuantizedVec};

pub const MAGIC: &[u8; 4] = b"LFSQ";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub key: u64,
    pub timestamp: i64,
    pub payload: QuantizedVec,
    pub soft_label: Option<f64>,
}

/// Up to `L` embeddings strictly before the query time, most recent first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SequenceFeature {
    pub entries: Vec<Vec<f64>>,
    pub timestamps: Vec<i64>,
    pub soft_labels: Vec<Option<f64>>,
    /// Length `L`; the first `entries.len()` bits are set.
    pub mask: Vec<bool>,
}

impl SequenceFeature {
    pub fn empty(max_len: usize) -> Self {
        SequenceFeature {
            mask: vec![false; max_len],
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct SeqStore {
    dim: usize,
    codec: Codec,
    records: Vec<EmbeddingRecord>,
    decoded: Vec<Vec<f64>>,
    index: BTreeMap<u64, Vec<usize>>,
}

impl SeqStore {
    pub fn new(dim: usize, codec: Codec) -> Self {
        SeqStore {
            dim,
            codec,
            records: Vec::new(),
            decoded: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn codec(&self) -> &Codec {
        &self.codec
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn append(&mut self, rec: EmbeddingRecord) -> Result<()> {
        if rec.payload.dim != self.dim {
            return Err(Error::format(0, format!("record dim {} in a dim-{} store", rec.payload.dim, self.dim)));
        }
        if rec.timestamp < 0 {
            return Err(Error::Data(format!("negative timestamp {}", rec.timestamp)));
        }
        let decoded = self.codec.dequantize(&rec.payload)?;
        let id = self.records.len();
        let list = self.index.entry(rec.key).or_default();
        let ts = rec.timestamp;
        let pos = list.partition_point(|&i| self.records[i].timestamp <= ts);
        list.insert(pos, id);
        self.records.push(rec);
        self.decoded.push(decoded);
        Ok(())
    }

    /// Quantizes `z` with the store codec and appends it.
    pub fn append_vector(&mut self, key: u64, timestamp: i64, z: &[f64], soft_label: Option<f64>) -> Result<()> {
        let payload = self.codec.quantize(z);
        self.append(EmbeddingRecord {
            key,
            timestamp,
            payload,
            soft_label,
        })
    }

    /// Records of `key` with `t_cur - window <= ts < t_cur`, the most recent `max_len`,
    /// most recent first; equal timestamps put the later insertion first.
    pub fn build_sequence(&self, key: u64, t_cur: i64, max_len: usize, window: i64) -> SequenceFeature {
        let mut seq = SequenceFeature::empty(max_len);
        let Some(list) = self.index.get(&key) else { return seq };
        let end = list.partition_point(|&i| self.records[i].timestamp < t_cur);
        let lo = t_cur.saturating_sub(window);
        for &i in list[..end].iter().rev() {
            if seq.entries.len() == max_len || self.records[i].timestamp < lo {
                break;
            }
            seq.entries.push(self.decoded[i].clone());
            seq.timestamps.push(self.records[i].timestamp);
            seq.soft_labels.push(self.records[i].soft_label);
        }
        for m in seq.mask.iter_mut().take(seq.entries.len()) {
            *m = true;
        }
        seq
    }

    pub fn mean_embedding(&self) -> Result<Vec<f64>> {
        if self.decoded.is_empty() {
            return Err(Error::Data("mean of an empty store".into()));
        }
        let mut m = vec![0.0; self.dim];
        for v in &self.decoded {
            for (a, b) in m.iter_mut().zip(v) {
                *a += b;
            }
        }
        let n = self.decoded.len() as f64;
        m.iter_mut().for_each(|a| *a /= n);
        Ok(m)
    }

    fn sorted_ids(&self) -> Vec<usize> {
        self.index.values().flat_map(|l| l.iter().copied()).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.records.len() * (25 + self.codec.payload_len(self.dim)));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.codec.descriptor_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for i in self.sorted_ids() {
            let r = &self.records[i];
            let start = out.len();
            out.extend_from_slice(&r.key.to_le_bytes());
            out.extend_from_slice(&r.timestamp.to_le_bytes());
            match r.soft_label {
                Some(p) => {
                    out.push(1);
                    out.extend_from_slice(&p.to_le_bytes());
                }
                None => out.push(0),
            }
            out.extend_from_slice(&r.payload.payload);
            let crc = crc32fast::hash(&out[start..]);
            out.extend_from_slice(&crc.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<SeqStore> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4, "magic")? != MAGIC {
            return Err(Error::format(0, "bad magic, expected LFSQ"));
        }
        let version = cur.u32("version")?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let dim = cur.u32("dim")? as usize;
        let (codec, used) = Codec::from_descriptor(&bytes[cur.pos..], cur.pos as u64)?;
        cur.pos += used;
        let count = cur.u64("record count")?;
        let plen = codec.payload_len(dim);
        let mut store = SeqStore::new(dim, codec);
        for idx in 0..count {
            let start = cur.pos;
            let ctx = |what: &str| format!("record {idx}: {what}");
            let key = cur.u64(&ctx("key"))?;
            let timestamp = cur.u64(&ctx("timestamp"))? as i64;
            let soft_label = match cur.take(1, &ctx("soft flag"))?[0] {
                0 => None,
                1 => Some(f64::from_le_bytes(cur.take(8, &ctx("soft label"))?.try_into().expect("8"))),
                f => return Err(Error::format(cur.pos as u64 - 1, format!("record {idx}: bad soft flag {f}"))),
            };
            let payload = cur.take(plen, &ctx("payload"))?.to_vec();
            let expect = crc32fast::hash(&bytes[start..cur.pos]);
            let crc_at = cur.pos as u64;
            if cur.u32(&ctx("checksum"))? != expect {
                return Err(Error::format(crc_at, format!("record {idx}: checksum mismatch")));
            }
            let rec = EmbeddingRecord {
                key,
                timestamp,
                payload: QuantizedVec {
                    codec_id: store.codec.id(),
                    dim,
                    payload,
                },
                soft_label,
            };
            store
                .append(rec)
                .map_err(|e| Error::format(start as u64, format!("record {idx}: {e}")))?;
        }
        if cur.pos != bytes.len() {
            return Err(Error::format(cur.pos as u64, "trailing bytes after last record"));
        }
        Ok(store)
    }

    pub fn persist(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SeqStore> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        SeqStore::from_bytes(&bytes)
    }

    /// Ends the logging phase; the result is immutable and cheap to share across threads.
    pub fn freeze(self) -> FrozenStore {
        FrozenStore(Arc::new(self))
    }
}

/// Read-only shared view of a finished store.
#[derive(Clone, Debug)]
pub struct FrozenStore(Arc<SeqStore>);

impl std::ops::Deref for FrozenStore {
    type Target = SeqStore;
    fn deref(&self) -> &SeqStore {
        &self.0
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.pos as u64, format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8")))
    }
}

/// L2 distance between the mean dequantized embeddings of two stores.
pub fn centroid_drift(a: &SeqStore, b: &SeqStore) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dim(format!("store dims {} and {}", a.dim(), b.dim())));
    }
    let (ma, mb) = (a.mean_embedding()?, b.mean_embedding()?);
    Ok(ma.iter().zip(&mb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(ts: &[i64]) -> SeqStore {
        let mut s = SeqStore::new(2, Codec::Fp32);
        for (i, &t) in ts.iter().enumerate() {
            s.append_vector(1, t, &[i as f64 / 10.0, 0.0], None).unwrap();
        }
        s
    }

    #[test]
    fn excludes_current_and_caps_length() {
        let s = store_with(&[1, 2, 3, 4, 5, 6, 7, 8]);
        let seq = s.build_sequence(1, 8, 5, 100);
        assert_eq!(seq.timestamps, vec![7, 6, 5, 4, 3]);
        assert_eq!(seq.mask, vec![true; 5]);
        let cold = s.build_sequence(2, 8, 3, 100);
        assert!(cold.is_empty());
        assert_eq!(cold.mask, vec![false; 3]);
    }

    #[test]
    fn window_is_inclusive_at_lower_edge() {
        let s = store_with(&[2, 3, 5]);
        assert_eq!(s.build_sequence(1, 6, 10, 3).timestamps, vec![5, 3]);
        assert_eq!(s.build_sequence(1, 6, 10, 4).timestamps, vec![5, 3, 2]);
    }

    #[test]
    fn equal_timestamps_keep_both_later_first() {
        let s = store_with(&[4, 4]);
        let seq = s.build_sequence(1, 5, 5, 10);
        assert_eq!(seq.entries, vec![vec![0.1f32 as f64, 0.0], vec![0.0, 0.0]]);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn empty_round_trip_and_canonical_bytes() {
        let s = SeqStore::new(3, Codec::Int4Uniform);
        let b = s.to_bytes();
        let back = SeqStore::from_bytes(&b).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.to_bytes(), b);
    }

    #[test]
    fn corrupt_payload_names_record() {
        let mut s = SeqStore::new(4, Codec::Int8Uniform);
        for i in 0..5 {
            s.append_vector(i, 10, &[0.1, 0.2, -0.3, 0.4], Some(0.5)).unwrap();
        }
        let mut b = s.to_bytes();
        let header = 4 + 4 + 4 + 1 + 8;
        let rec_len = 8 + 8 + 1 + 8 + 4 + 4;
        b[header + 2 * rec_len + 26] ^= 0xFF;
        let err = SeqStore::from_bytes(&b).unwrap_err();
        assert!(matches!(&err, Error::Format { msg, .. } if msg.contains("record 2")), "{err}");
        assert!(SeqStore::from_bytes(&b[..header + 3]).is_err());
        let mut bad = s.to_bytes();
        bad[0] = b'X';
        assert!(SeqStore::from_bytes(&bad).is_err());
    }

    #[test]
    fn drift_of_translation() {
        let mut a = SeqStore::new(3, Codec::Fp32);
        let mut b = SeqStore::new(3, Codec::Fp32);
        for i in 0..4 {
            let v = [i as f64 * 0.125, -0.25, 0.5];
            a.append_vector(0, i, &v, None).unwrap();
            b.append_vector(0, i, &v.map(|x| x + 0.125), None).unwrap();
        }
        assert_eq!(centroid_drift(&a, &a).unwrap(), 0.0);
        assert!((centroid_drift(&a, &b).unwrap() - 3f64.sqrt() * 0.125).abs() < 1e-12);
        assert!(centroid_drift(&a, &SeqStore::new(3, Codec::Fp32)).is_err());
    }
}
