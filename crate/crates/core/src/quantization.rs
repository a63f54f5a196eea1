//! Scalar codecs for stored embeddings.
//!
//! Four-bit codes are stored as unsigned nibbles offset by 8, two per byte,
//! with the even-indexed code in the low nibble.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::stream_rng;

pub const KMEANS_CENTERS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Codec {
    Fp32,
    Int8Uniform,
    Int4Uniform,
    Int4Kmeans { codebook: Vec<f64> },
}

/// Packed codes for one vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedVec {
    pub codec_id: u8,
    pub dim: usize,
    pub payload: Vec<u8>,
}

impl Codec {
    pub fn id(&self) -> u8 {
        match self {
            Codec::Fp32 => 0,
            Codec::Int8Uniform => 1,
            Codec::Int4Uniform => 2,
            Codec::Int4Kmeans { .. } => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Codec::Fp32 => "fp32",
            Codec::Int8Uniform => "int8_uniform",
            Codec::Int4Uniform => "int4_uniform",
            Codec::Int4Kmeans { .. } => "int4_kmeans",
        }
    }

    pub fn bits(&self) -> usize {
        match self {
            Codec::Fp32 => 32,
            Codec::Int8Uniform => 8,
            Codec::Int4Uniform | Codec::Int4Kmeans { .. } => 4,
        }
    }

    pub fn payload_len(&self, dim: usize) -> usize {
        (dim * self.bits()).div_ceil(8)
    }

    /// Validates the codebook of a k-means codec.
    pub fn kmeans(codebook: Vec<f64>) -> Result<Codec> {
        if codebook.len() != KMEANS_CENTERS {
            return Err(Error::config(format!("codebook has {} entries, need 16", codebook.len())));
        }
        if codebook.windows(2).any(|w| w[0] >= w[1]) || codebook.iter().any(|c| !(-1.0..=1.0).contains(c)) {
            return Err(Error::config("codebook must be strictly ascending within [-1, 1]"));
        }
        Ok(Codec::Int4Kmeans { codebook })
    }

    pub fn quantize(&self, z: &[f64]) -> QuantizedVec {
        let clamped = z.iter().map(|v| v.clamp(-1.0, 1.0));
        let payload = match self {
            Codec::Fp32 => z.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect(),
            Codec::Int8Uniform => clamped.map(|v| int8_code(v) as u8).collect(),
            Codec::Int4Uniform => {
                let codes: Vec<i8> = clamped.map(int4_code).collect();
                pack_nibbles(&codes).expect("int4 codes are in range")
            }
            Codec::Int4Kmeans { codebook } => {
                let codes: Vec<i8> = clamped.map(|v| nearest_center(codebook, v) as i8 - 8).collect();
                pack_nibbles(&codes).expect("indices are in range")
            }
        };
        QuantizedVec {
            codec_id: self.id(),
            dim: z.len(),
            payload,
        }
    }

    pub fn dequantize(&self, q: &QuantizedVec) -> Result<Vec<f64>> {
        if q.codec_id != self.id() {
            return Err(Error::format(0, format!("codec id {} for codec {}", q.codec_id, self.name())));
        }
        let need = self.payload_len(q.dim);
        if q.payload.len() != need {
            return Err(Error::format(
                q.payload.len().min(need) as u64,
                format!("payload of {} bytes, expected {need}", q.payload.len()),
            ));
        }
        Ok(match self {
            Codec::Fp32 => q
                .payload
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                .collect(),
            Codec::Int8Uniform => q.payload.iter().map(|&b| f64::from(b as i8) / 127.0).collect(),
            Codec::Int4Uniform => unpack_nibbles(&q.payload, q.dim)?
                .into_iter()
                .map(|c| f64::from(c) / 8.0)
                .collect(),
            Codec::Int4Kmeans { codebook } => unpack_nibbles(&q.payload, q.dim)?
                .into_iter()
                .map(|c| codebook[(c + 8) as usize])
                .collect(),
        })
    }

    /// Quantize then dequantize.
    pub fn round_trip(&self, z: &[f64]) -> Vec<f64> {
        self.dequantize(&self.quantize(z)).expect("self-produced payload")
    }

    /// Mean squared reconstruction error over a scalar pool.
    pub fn mse(&self, samples: &[f64]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let rt = self.round_trip(samples);
        samples
            .iter()
            .zip(&rt)
            .map(|(a, b)| (a.clamp(-1.0, 1.0) - b).powi(2))
            .sum::<f64>()
            / samples.len() as f64
    }

    /// Serialized header descriptor: id byte, then 16 LE f64 centers for k-means.
    pub fn descriptor_bytes(&self) -> Vec<u8> {
        let mut out = vec![self.id()];
        if let Codec::Int4Kmeans { codebook } = self {
            for c in codebook {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out
    }

    /// Parses a descriptor at `offset`, returning the codec and bytes consumed.
    pub fn from_descriptor(bytes: &[u8], offset: u64) -> Result<(Codec, usize)> {
        let id = *bytes.first().ok_or_else(|| Error::format(offset, "missing codec id"))?;
        match id {
            0 => Ok((Codec::Fp32, 1)),
            1 => Ok((Codec::Int8Uniform, 1)),
            2 => Ok((Codec::Int4Uniform, 1)),
            3 => {
                let need = 1 + 8 * KMEANS_CENTERS;
                if bytes.len() < need {
                    return Err(Error::format(offset + bytes.len() as u64, "truncated codebook"));
                }
                let cb = bytes[1..need]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                let codec = Codec::kmeans(cb).map_err(|e| Error::format(offset + 1, e.to_string()))?;
                Ok((codec, need))
            }
            other => Err(Error::format(offset, format!("unknown codec id {other}"))),
        }
    }

    pub fn parse(name: &str) -> Result<Codec> {
        match name {
            "fp32" => Ok(Codec::Fp32),
            "int8" | "int8_uniform" => Ok(Codec::Int8Uniform),
            "int4" | "int4_uniform" => Ok(Codec::Int4Uniform),
            other => Err(Error::config(format!(
                "unknown codec `{other}` (int4_kmeans must be fitted)"
            ))),
        }
    }
}

fn int8_code(z: f64) -> i8 {
    (z * 127.0).round().clamp(-127.0, 127.0) as i8
}

fn int4_code(z: f64) -> i8 {
    (z * 8.0).round().clamp(-8.0, 7.0) as i8
}

/// Index of the nearest center in a sorted codebook; ties go to the lower index.
pub fn nearest_center(codebook: &[f64], z: f64) -> usize {
    let hi = codebook.partition_point(|&c| c < z);
    if hi == 0 {
        return 0;
    }
    if hi == codebook.len() {
        return codebook.len() - 1;
    }
    if (z - codebook[hi]).abs() < (z - codebook[hi - 1]).abs() {
        hi
    } else {
        hi - 1
    }
}

/// Packs signed codes in `[-8, 7]`; odd lengths pad the final high nibble with 0.
pub fn pack_nibbles(codes: &[i8]) -> Result<Vec<u8>> {
    if let Some(pos) = codes.iter().position(|c| !(-8..=7).contains(c)) {
        return Err(Error::format(pos as u64, format!("code {} outside [-8, 7]", codes[pos])));
    }
    Ok(codes
        .chunks(2)
        .map(|pair| {
            let lo = (pair[0] + 8) as u8;
            let hi = pair.get(1).map_or(0, |&c| (c + 8) as u8);
            lo | (hi << 4)
        })
        .collect())
}

pub fn unpack_nibbles(bytes: &[u8], dim: usize) -> Result<Vec<i8>> {
    let need = dim.div_ceil(2);
    if bytes.len() < need {
        return Err(Error::format(bytes.len() as u64, format!("need {need} bytes for {dim} codes")));
    }
    Ok((0..dim)
        .map(|i| {
            let b = bytes[i / 2];
            let nib = if i % 2 == 0 { b & 0x0F } else { b >> 4 };
            nib as i8 - 8
        })
        .collect())
}

/// Result of a Lloyd fit: the codec and the within-cluster SSE after each assignment step.
#[derive(Clone, Debug)]
pub struct KmeansFit {
    pub codec: Codec,
    pub sse_trace: Vec<f64>,
}

/// Fits one global 16-entry scalar codebook.
pub fn fit_kmeans_int4(samples: &[f64], iters: usize, seed: u64) -> Result<Codec> {
    Ok(fit_kmeans_int4_traced(samples, iters, seed)?.codec)
}

pub fn fit_kmeans_int4_traced(samples: &[f64], iters: usize, seed: u64) -> Result<KmeansFit> {
    let mut xs: Vec<f64> = samples.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite sample".into()));
    }
    xs.sort_by(f64::total_cmp);
    let distinct = 1 + xs.windows(2).filter(|w| w[0] != w[1]).count();
    if xs.is_empty() || distinct < KMEANS_CENTERS {
        return Err(Error::Data(format!(
            "k-means needs at least 16 distinct values, got {}",
            if xs.is_empty() { 0 } else { distinct }
        )));
    }
    let n = xs.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + xs[i];
    }

    let mut centers = kmeanspp(&xs, seed);
    let mut assign = vec![usize::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..iters.max(1) {
        let changed = assign_sorted(&xs, &centers, &mut assign);
        trace.push(sse_of(&xs, &centers, &assign));
        if !changed && trace.len() > 1 {
            break;
        }
        let mut counts = vec![0usize; KMEANS_CENTERS];
        let mut start = vec![usize::MAX; KMEANS_CENTERS];
        for (i, &a) in assign.iter().enumerate() {
            if counts[a] == 0 {
                start[a] = i;
            }
            counts[a] += 1;
        }
        for k in 0..KMEANS_CENTERS {
            if counts[k] > 0 {
                let s = start[k];
                centers[k] = (prefix[s + counts[k]] - prefix[s]) / counts[k] as f64;
            }
        }
        for k in 0..KMEANS_CENTERS {
            if counts[k] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = (xs[a] - centers[assign[a]]).abs();
                        let db = (xs[b] - centers[assign[b]]).abs();
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("nonempty");
                centers[k] = xs[far];
                assign[far] = k;
            }
        }
        centers.sort_by(f64::total_cmp);
    }
    assign_sorted(&xs, &centers, &mut assign);
    let final_sse = sse_of(&xs, &centers, &assign);
    if trace.last() != Some(&final_sse) {
        trace.push(final_sse);
    }
    Ok(KmeansFit {
        codec: Codec::kmeans(centers).map_err(|e| Error::Numeric(e.to_string()))?,
        sse_trace: trace,
    })
}

fn kmeanspp(xs: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, "kmeans++");
    let mut centers = vec![xs[rng.random_range(0..xs.len())]];
    let mut d2: Vec<f64> = xs.iter().map(|x| (x - centers[0]).powi(2)).collect();
    while centers.len() < KMEANS_CENTERS {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random_range(0.0..total);
        let mut pick = xs.len() - 1;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        if d2[pick] == 0.0 {
            pick = d2.iter().rposition(|&d| d > 0.0).expect("distinct values remain");
        }
        let c = xs[pick];
        centers.push(c);
        for (d, x) in d2.iter_mut().zip(xs) {
            *d = d.min((x - c).powi(2));
        }
    }
    centers.sort_by(f64::total_cmp);
    centers
}

fn assign_sorted(xs: &[f64], centers: &[f64], assign: &mut [usize]) -> bool {
    let mut changed = false;
    let mut j = 0;
    for (i, &x) in xs.iter().enumerate() {
        while j + 1 < centers.len() && (x - centers[j + 1]).abs() < (x - centers[j]).abs() {
            j += 1;
        }
        if assign[i] != j {
            assign[i] = j;
            changed = true;
        }
    }
    changed
}

fn sse_of(xs: &[f64], centers: &[f64], assign: &[usize]) -> f64 {
    xs.iter().zip(assign).map(|(x, &a)| (x - centers[a]).powi(2)).sum()
}
