use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::{Activation, Matrix, Mlp, ParamStore, Segment, Tape, Var};
use crate::seqstore::SequenceFeature;

/// Score MLP width of the attention pooler.
pub const DIN_WIDTH: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeqEncoderKind {
    MeanPool,
    SumPool,
    DinAttention,
}

impl std::str::FromStr for SeqEncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_pool" | "mean" => Ok(SeqEncoderKind::MeanPool),
            "sum_pool" | "sum" => Ok(SeqEncoderKind::SumPool),
            "din_attention" | "din" => Ok(SeqEncoderKind::DinAttention),
            other => Err(Error::config(format!("unknown sequence encoder `{other}`"))),
        }
    }
}

/// Pools a batch of variable-length sequences of `dim`-vectors into one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqEncoder {
    pub kind: SeqEncoderKind,
    pub dim: usize,
    scorer: Mlp,
}

impl SeqEncoder {
    pub fn new(kind: SeqEncoderKind, dim: usize, prefix: &str) -> Self {
        SeqEncoder {
            kind,
            dim,
            scorer: Mlp::new(
                &format!("{prefix}.att"),
                &[4 * dim, DIN_WIDTH, 1],
                Activation::Relu,
                Activation::Identity,
            ),
        }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        if self.kind == SeqEncoderKind::DinAttention {
            self.scorer.init(store, seed)?;
        }
        Ok(())
    }

    /// `entries` stacks every sample's rows (`segs[i]` owns sample `i`); `query` is batch×dim
    /// and only read by attention.
    pub fn record(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        entries: Var,
        query: Option<Var>,
        segs: &[Segment],
    ) -> Result<Var> {
        let (_, cols) = tape.value(entries).shape();
        if cols != self.dim {
            return Err(Error::dim(format!("sequence entries have dim {cols}, encoder expects {}", self.dim)));
        }
        let n_rows = tape.value(entries).rows();
        let weights = match self.kind {
            SeqEncoderKind::MeanPool | SeqEncoderKind::SumPool => {
                let mut w = Matrix::zeros(n_rows, 1);
                for s in segs {
                    let v = if self.kind == SeqEncoderKind::MeanPool { 1.0 / s.len.max(1) as f64 } else { 1.0 };
                    for r in s.start..s.start + s.len {
                        w.data_mut()[r] = v;
                    }
                }
                tape.constant(w)
            }
            SeqEncoderKind::DinAttention => {
                let q = query.ok_or_else(|| Error::config("attention pooling needs a query"))?;
                let (qr, qc) = tape.value(q).shape();
                if qc != self.dim || qr != segs.len() {
                    return Err(Error::dim(format!(
                        "query is {qr}x{qc}, expected {}x{}",
                        segs.len(),
                        self.dim
                    )));
                }
                let mut owner = vec![0usize; n_rows];
                for (i, s) in segs.iter().enumerate() {
                    owner[s.start..s.start + s.len].fill(i);
                }
                let qr = tape.gather_rows(q, &owner)?;
                let prod = tape.mul(entries, qr)?;
                let diff = tape.sub(entries, qr)?;
                let feats = tape.concat_cols(&[entries, qr, prod, diff])?;
                let scores = *self.scorer.forward(tape, store, feats)?.last().expect("scorer has layers");
                tape.segment_softmax(scores, segs)?
            }
        };
        tape.segment_weighted_sum(weights, entries, segs)
    }
}

/// Stacks per-sample sequences; returns the entry matrix (rows most recent first) and segments.
pub fn stack_sequences(seqs: &[&SequenceFeature], dim: usize) -> Result<(Matrix, Vec<Segment>)> {
    let total: usize = seqs.iter().map(|s| s.len()).sum();
    let mut data = Vec::with_capacity(total * dim);
    let mut segs = Vec::with_capacity(seqs.len());
    for s in seqs {
        segs.push(Segment {
            start: data.len() / dim.max(1),
            len: s.len(),
        });
        for e in &s.entries {
            if e.len() != dim {
                return Err(Error::dim(format!("sequence entry of dim {}, expected {dim}", e.len())));
            }
            data.extend_from_slice(e);
        }
    }
    Ok((Matrix::from_vec(total, dim, data)?, segs))
}

/// Pools one sequence; `query` is ignored by the pooling variants.
pub fn seq_encode(enc: &SeqEncoder, store: &ParamStore, seq: &SequenceFeature, query: &[f64]) -> Result<Vec<f64>> {
    if enc.kind == SeqEncoderKind::DinAttention && query.len() != enc.dim {
        return Err(Error::dim(format!("query of dim {}, expected {}", query.len(), enc.dim)));
    }
    let (m, segs) = stack_sequences(&[seq], enc.dim)?;
    let mut tape = Tape::new();
    let entries = tape.constant(m);
    let q = (enc.kind == SeqEncoderKind::DinAttention).then(|| tape.constant(Matrix::row_vector(query)));
    let out = enc.record(&mut tape, store, entries, q, &segs)?;
    Ok(tape.value(out).row(0).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::grad_check;

    fn seq(entries: Vec<Vec<f64>>) -> SequenceFeature {
        let n = entries.len();
        SequenceFeature {
            timestamps: (0..n as i64).rev().collect(),
            soft_labels: vec![None; n],
            mask: vec![true; n],
            entries,
        }
    }

    fn encoder(kind: SeqEncoderKind, dim: usize) -> (SeqEncoder, ParamStore) {
        let enc = SeqEncoder::new(kind, dim, "enc");
        let mut store = ParamStore::new();
        enc.init(&mut store, 3).unwrap();
        (enc, store)
    }

    #[test]
    fn mean_and_sum_examples() {
        let (m, st) = encoder(SeqEncoderKind::MeanPool, 2);
        let s = seq(vec![vec![1.0, 1.0], vec![3.0, 3.0]]);
        assert_eq!(seq_encode(&m, &st, &s, &[]).unwrap(), vec![2.0, 2.0]);
        let (sm, st) = encoder(SeqEncoderKind::SumPool, 2);
        assert_eq!(seq_encode(&sm, &st, &s, &[]).unwrap(), vec![4.0, 4.0]);
        assert_eq!(seq_encode(&sm, &st, &SequenceFeature::empty(5), &[]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(seq_encode(&m, &st, &SequenceFeature::empty(5), &[]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn din_identical_entries_equal_mean() {
        let (d, st) = encoder(SeqEncoderKind::DinAttention, 3);
        let e = vec![0.3, -0.7, 0.2];
        let out = seq_encode(&d, &st, &seq(vec![e.clone(); 4]), &[0.5, 0.1, -0.4]).unwrap();
        for (a, b) in out.iter().zip(&e) {
            assert!((a - b).abs() < 1e-12);
        }
        let empty = seq_encode(&d, &st, &SequenceFeature::empty(3), &[0.5, 0.1, -0.4]).unwrap();
        assert_eq!(empty, vec![0.0; 3]);
    }

    #[test]
    fn din_is_permutation_invariant() {
        let (d, st) = encoder(SeqEncoderKind::DinAttention, 2);
        let a = vec![vec![0.9, -0.1], vec![-0.5, 0.4], vec![0.2, 0.8]];
        let mut b = a.clone();
        b.rotate_left(1);
        let q = [0.3, -0.6];
        let (x, y) = (seq_encode(&d, &st, &seq(a), &q).unwrap(), seq_encode(&d, &st, &seq(b), &q).unwrap());
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_errors() {
        let (m, st) = encoder(SeqEncoderKind::MeanPool, 2);
        assert!(matches!(seq_encode(&m, &st, &seq(vec![vec![1.0; 3]]), &[]), Err(Error::Dimension(_))));
        let (d, st) = encoder(SeqEncoderKind::DinAttention, 2);
        assert!(matches!(seq_encode(&d, &st, &seq(vec![vec![1.0; 2]]), &[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn din_batch_with_empty_rows_gradients() {
        let (d, mut st) = encoder(SeqEncoderKind::DinAttention, 3);
        st.insert_glorot("q", 3, 3, 8).unwrap();
        let seqs = [
            seq(vec![vec![0.1, 0.5, -0.3], vec![0.7, -0.2, 0.4]]),
            SequenceFeature::empty(2),
            seq(vec![vec![-0.6, 0.3, 0.9]]),
        ];
        let refs: Vec<&SequenceFeature> = seqs.iter().collect();
        let (m, segs) = stack_sequences(&refs, 3).unwrap();
        let err = grad_check(
            |p| {
                let mut t = Tape::new();
                let e = t.constant(m.clone());
                let qw = t.param(p, "q")?;
                let x = t_rows(&mut t);
                let q = t.matmul(x, qw)?;
                let out = d.record(&mut t, p, e, Some(q), &segs)?;
                let s = t.sum_cols(out);
                let sq = t.mul(s, s)?;
                let seed = Matrix::filled(3, 1, 1.0);
                let loss = t.value(sq).data().iter().sum();
                Ok((loss, t.backward_with_seed(sq, &seed, p)?))
            },
            &st,
            usize::MAX,
            1e-5,
            0,
        )
        .unwrap();
        assert!(err < 1e-3, "{err}");
    }

    fn t_rows(t: &mut Tape) -> Var {
        t.constant(Matrix::from_rows(&[vec![0.2, -0.4, 0.9], vec![0.5, 0.5, -0.1], vec![-0.3, 0.8, 0.6]]).unwrap())
    }

    #[test]
    fn all_empty_batch_pools_to_zero() {
        for kind in [SeqEncoderKind::MeanPool, SeqEncoderKind::SumPool, SeqEncoderKind::DinAttention] {
            let (enc, st) = encoder(kind, 2);
            let seqs = [SequenceFeature::empty(4), SequenceFeature::empty(4)];
            let refs: Vec<&SequenceFeature> = seqs.iter().collect();
            let (m, segs) = stack_sequences(&refs, 2).unwrap();
            let mut t = Tape::new();
            let e = t.constant(m);
            let q = t.constant(Matrix::zeros(2, 2));
            let out = enc.record(&mut t, &st, e, Some(q), &segs).unwrap();
            assert_eq!(t.value(out), &Matrix::zeros(2, 2));
        }
    }
}
