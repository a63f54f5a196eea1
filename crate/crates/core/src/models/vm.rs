use serde::{Deserialize, Serialize};

use super::schema::FeatureSchema;
use super::seqenc::{stack_sequences, SeqEncoder, SeqEncoderKind};
use crate::error::{Error, Result};
use crate::nncore::{Grads, Matrix, ParamStore, Tape, Var};
use crate::seqstore::SequenceFeature;
use crate::synthworld::EventSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchConfig {
    /// Dimension of each stored sequence entry.
    pub seq_dim: usize,
    pub encoder: SeqEncoderKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VmConfig {
    pub d_emb: usize,
    pub hidden: Vec<usize>,
    pub branch: Option<BranchConfig>,
}

impl Default for VmConfig {
    fn default() -> Self {
        VmConfig {
            d_emb: 4,
            hidden: vec![32, 16],
            branch: None,
        }
    }
}

/// What the student may read: VM-visible ids and, with the branch on, the stored sequence.
#[derive(Clone, Copy, Debug)]
pub struct VmInput<'a> {
    pub vm: &'a [u32],
    pub seq: Option<&'a SequenceFeature>,
}

impl<'a> VmInput<'a> {
    pub fn of(sample: &'a EventSample, seq: Option<&'a SequenceFeature>) -> Self {
        VmInput { vm: &sample.vm, seq }
    }
}

/// Student: first-order terms, a bi-interaction vector and a deep tower over VM-visible
/// embeddings; the optional branch feeds `[pooled; presence]` into the first deep layer.
#[derive(Clone, Debug, PartialEq)]
pub struct VmModel {
    pub schema: FeatureSchema,
    pub cfg: VmConfig,
    encoder: Option<SeqEncoder>,
}

impl VmModel {
    pub fn new(schema: FeatureSchema, cfg: VmConfig) -> Result<Self> {
        if cfg.d_emb == 0 || cfg.hidden.is_empty() || cfg.hidden.contains(&0) {
            return Err(Error::config("vm needs d_emb ≥ 1 and nonempty positive hidden widths"));
        }
        let encoder = match &cfg.branch {
            Some(b) if b.seq_dim == 0 => return Err(Error::config("sequence dim must be ≥ 1")),
            Some(b) => Some(SeqEncoder::new(b.encoder, b.seq_dim, "vm.seq")),
            None => None,
        };
        Ok(VmModel { schema, cfg, encoder })
    }

    pub fn has_branch(&self) -> bool {
        self.encoder.is_some()
    }

    fn emb_name(&self, i: usize) -> String {
        format!("vm.emb.{}", self.schema.vm_features()[i].name)
    }

    fn lin_name(&self, i: usize) -> String {
        format!("vm.lin.{}", self.schema.vm_features()[i].name)
    }

    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        let d = self.cfg.d_emb;
        for (i, f) in self.schema.vm_features().iter().enumerate() {
            store.insert_glorot(&self.emb_name(i), f.cardinality, d, seed)?;
            store.insert_zeros(&self.lin_name(i), f.cardinality, 1)?;
        }
        let mut width = self.schema.m_s() * d;
        for (l, &h) in self.cfg.hidden.iter().enumerate() {
            store.insert_glorot(&format!("vm.deep.w{l}"), width, h, seed)?;
            store.insert_zeros(&format!("vm.deep.b{l}"), 1, h)?;
            width = h;
        }
        store.insert_zeros("vm.head.w", width + d, 1)?;
        store.insert_zeros("vm.head.b", 1, 1)?;
        if let Some(enc) = &self.encoder {
            enc.init(&mut store, seed)?;
            store.insert_zeros("vm.seq.w0s", enc.dim + 1, self.cfg.hidden[0])?;
            if enc.kind == SeqEncoderKind::DinAttention {
                store.insert_glorot("vm.seq.q", self.schema.m_s() * d, enc.dim, seed)?;
            }
        }
        Ok(store)
    }

    /// Records the forward pass; returns the n×1 probability column.
    pub fn record(&self, tape: &mut Tape, store: &ParamStore, batch: &[VmInput]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Data("empty vm batch".into()));
        }
        for s in batch {
            self.schema.check_vm(s.vm)?;
            match (s.seq.is_some(), self.has_branch()) {
                (true, false) => return Err(Error::config("sequence given to a vm without the sequence branch")),
                (false, true) => return Err(Error::config("vm sequence branch needs a sequence input")),
                _ => {}
            }
        }
        let mut embs = Vec::with_capacity(self.schema.m_s());
        let mut lin = None;
        for i in 0..self.schema.m_s() {
            let ids: Vec<usize> = batch.iter().map(|s| s.vm[i] as usize).collect();
            let table = tape.param(store, &self.emb_name(i))?;
            embs.push(tape.gather_rows(table, &ids)?);
            let lt = tape.param(store, &self.lin_name(i))?;
            let w = tape.gather_rows(lt, &ids)?;
            lin = Some(match lin {
                None => w,
                Some(acc) => tape.add(acc, w)?,
            });
        }
        let (mut sum, mut sq) = (embs[0], tape.mul(embs[0], embs[0])?);
        for &e in &embs[1..] {
            sum = tape.add(sum, e)?;
            let e2 = tape.mul(e, e)?;
            sq = tape.add(sq, e2)?;
        }
        let sum2 = tape.mul(sum, sum)?;
        let bi = tape.sub(sum2, sq)?;
        let bi = tape.scale(bi, 0.5);

        let concat = tape.concat_cols(&embs)?;
        let mut h = concat;
        for l in 0..self.cfg.hidden.len() {
            let w = tape.param(store, &format!("vm.deep.w{l}"))?;
            let b = tape.param(store, &format!("vm.deep.b{l}"))?;
            let mut pre = tape.affine(h, w, b)?;
            if l == 0 {
                if let Some(enc) = &self.encoder {
                    let branch = self.record_branch(tape, store, enc, batch, concat)?;
                    let w0s = tape.param(store, "vm.seq.w0s")?;
                    let extra = tape.matmul(branch, w0s)?;
                    pre = tape.add(pre, extra)?;
                }
            }
            h = tape.relu(pre);
        }
        let head_in = tape.concat_cols(&[h, bi])?;
        let w = tape.param(store, "vm.head.w")?;
        let b = tape.param(store, "vm.head.b")?;
        let logit = tape.affine(head_in, w, b)?;
        let logit = tape.add(logit, lin.expect("m_s ≥ 1"))?;
        Ok(tape.sigmoid(logit))
    }

    fn record_branch(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        enc: &SeqEncoder,
        batch: &[VmInput],
        concat: Var,
    ) -> Result<Var> {
        let seqs: Vec<&SequenceFeature> = batch.iter().map(|s| s.seq.expect("checked")).collect();
        let (m, segs) = stack_sequences(&seqs, enc.dim)?;
        let entries = tape.constant(m);
        let query = if enc.kind == SeqEncoderKind::DinAttention {
            let qw = tape.param(store, "vm.seq.q")?;
            Some(tape.matmul(concat, qw)?)
        } else {
            None
        };
        let pooled = enc.record(tape, store, entries, query, &segs)?;
        let flags: Vec<f64> = seqs.iter().map(|s| if s.is_empty() { 0.0 } else { 1.0 }).collect();
        let flag = tape.constant(Matrix::column(&flags));
        tape.concat_cols(&[pooled, flag])
    }

    pub fn predict(&self, store: &ParamStore, batch: &[VmInput]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.record(&mut tape, store, batch)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Joint task + KD loss of a batch, with gradients.
    pub fn loss_and_grads(
        &self,
        store: &ParamStore,
        batch: &[VmInput],
        labels: &[f64],
        soft: &[f64],
        lambda: f64,
    ) -> Result<(f64, Grads)> {
        let mut tape = Tape::new();
        let p = self.record(&mut tape, store, batch)?;
        let loss = super::loss::record_joint_loss(&mut tape, p, labels, soft, lambda)?;
        Ok((tape.scalar(loss), tape.backward(loss, store)?))
    }
}

/// Single-sample prediction.
pub fn vm_forward(vm: &VmModel, store: &ParamStore, sample: &EventSample, seq: Option<&SequenceFeature>) -> Result<f64> {
    Ok(vm.predict(store, &[VmInput::of(sample, seq)])?[0])
}
