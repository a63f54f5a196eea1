use serde::{Deserialize, Serialize};

use super::schema::FeatureSchema;
use super::seqenc::{SeqEncoder, SeqEncoderKind};
use crate::error::{Error, Result};
use crate::nncore::{Activation, Matrix, Mlp, ParamStore, Segment, Tape, Var};
use crate::synthworld::{EventSample, Side};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FmConfig {
    pub d_emb: usize,
    /// Widths of the hidden layers; the last one is the `deep` layer.
    pub hidden: Vec<usize>,
    /// Past events attended to; 0 disables the history block.
    pub history_len: usize,
}

impl Default for FmConfig {
    fn default() -> Self {
        FmConfig {
            d_emb: 8,
            hidden: vec![32, 16, 8],
            history_len: 16,
        }
    }
}

/// One past event of the same user as the FM sees it: raw VM ids and the logged label.
#[derive(Clone, Debug, PartialEq)]
pub struct HistEvent {
    pub vm: Vec<u32>,
    pub label: u8,
}

impl HistEvent {
    pub fn of(e: &EventSample) -> Self {
        HistEvent {
            vm: e.vm.clone(),
            label: e.label,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FmInput<'a> {
    pub vm: &'a [u32],
    pub extra: &'a [u32],
    /// Oldest first; only the last `history_len` entries are read.
    pub history: &'a [HistEvent],
}

/// Tape handles of one FM forward pass.
#[derive(Clone, Debug)]
pub struct FmGraph {
    pub prob: Var,
    pub emb_layer: Var,
    pub layers: Vec<Var>,
    pub item_emb: Option<Var>,
}

/// Values of every named activation, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FmActivations {
    pub prob: Vec<f64>,
    pub emb_layer: Matrix,
    pub layers: Vec<Matrix>,
    pub item_emb: Option<Matrix>,
}

impl FmActivations {
    /// Looks up `emb_layer`, `hidden_{i}` or `deep`.
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        if name == "emb_layer" {
            return Some(&self.emb_layer);
        }
        if name == "deep" {
            return self.layers.last();
        }
        let i: usize = name.strip_prefix("hidden_")?.parse().ok()?;
        (i + 1 < self.layers.len()).then(|| &self.layers[i])
    }
}

/// Teacher: embeddings of every feature, attention over raw history, MLP, sigmoid head.
#[derive(Clone, Debug, PartialEq)]
pub struct FmModel {
    pub schema: FeatureSchema,
    pub cfg: FmConfig,
    item_vm: Vec<usize>,
    mlp: Mlp,
    history: Option<SeqEncoder>,
}

impl FmModel {
    pub fn new(schema: FeatureSchema, cfg: FmConfig) -> Result<Self> {
        if cfg.d_emb == 0 || cfg.hidden.is_empty() || cfg.hidden.contains(&0) {
            return Err(Error::config("fm needs d_emb ≥ 1 and nonempty positive hidden widths"));
        }
        let item_vm: Vec<usize> = (0..schema.m_s()).filter(|&i| schema.features()[i].side == Side::Item).collect();
        let k = item_vm.len() * cfg.d_emb;
        let history = (cfg.history_len > 0 && k > 0).then(|| SeqEncoder::new(SeqEncoderKind::DinAttention, k, "fm.hist"));
        let mut widths = vec![schema.m_k() * cfg.d_emb + history.as_ref().map_or(0, |h| h.dim)];
        widths.extend(&cfg.hidden);
        let mlp = Mlp::new("fm.mlp", &widths, Activation::Relu, Activation::Relu);
        Ok(FmModel {
            schema,
            cfg,
            item_vm,
            mlp,
            history,
        })
    }

    pub fn emb_name(&self, feature: usize) -> String {
        format!("fm.emb.{}", self.schema.features()[feature].name)
    }

    /// Names of the exposed activations, in layer order.
    pub fn layer_names(&self) -> Vec<String> {
        let n = self.cfg.hidden.len();
        let mut names = vec!["emb_layer".to_string()];
        names.extend((0..n - 1).map(|i| format!("hidden_{i}")));
        names.push("deep".into());
        names
    }

    pub fn emb_width(&self) -> usize {
        self.schema.m_k() * self.cfg.d_emb
    }

    pub fn item_width(&self) -> usize {
        self.schema.item_positions().len() * self.cfg.d_emb
    }

    /// Zero-initialized output head, Glorot everywhere else.
    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for (i, f) in self.schema.features().iter().enumerate() {
            store.insert_glorot(&self.emb_name(i), f.cardinality, self.cfg.d_emb, seed)?;
        }
        if let Some(h) = &self.history {
            h.init(&mut store, seed)?;
            store.insert_glorot("fm.hist.label", 2, h.dim, seed)?;
        }
        self.mlp.init(&mut store, seed)?;
        store.insert_zeros("fm.head.w", self.mlp.out_width(), 1)?;
        store.insert_zeros("fm.head.b", 1, 1)?;
        Ok(store)
    }

    pub fn record(&self, tape: &mut Tape, store: &ParamStore, batch: &[FmInput]) -> Result<FmGraph> {
        if batch.is_empty() {
            return Err(Error::Data("empty fm batch".into()));
        }
        for s in batch {
            self.schema.check_vm(s.vm)?;
            self.schema.check_extra(s.extra)?;
        }
        let m_s = self.schema.m_s();
        let mut tables = Vec::with_capacity(self.schema.m_k());
        let mut embs = Vec::with_capacity(self.schema.m_k());
        for i in 0..self.schema.m_k() {
            let table = tape.param(store, &self.emb_name(i))?;
            let ids: Vec<usize> = batch
                .iter()
                .map(|s| if i < m_s { s.vm[i] } else { s.extra[i - m_s] } as usize)
                .collect();
            embs.push(tape.gather_rows(table, &ids)?);
            tables.push(table);
        }
        let emb_layer = tape.concat_cols(&embs)?;
        let items = self.schema.item_positions();
        let item_emb = if items.is_empty() {
            None
        } else {
            Some(tape.concat_cols(&items.iter().map(|&i| embs[i]).collect::<Vec<_>>())?)
        };
        let mut mlp_in = emb_layer;
        if let Some(h) = &self.history {
            let query = tape.concat_cols(&self.item_vm.iter().map(|&i| embs[i]).collect::<Vec<_>>())?;
            let mut segs = Vec::with_capacity(batch.len());
            let mut ids = vec![Vec::new(); self.item_vm.len()];
            let mut labels = Vec::new();
            for s in batch {
                let past = &s.history[s.history.len().saturating_sub(self.cfg.history_len)..];
                segs.push(Segment {
                    start: labels.len(),
                    len: past.len(),
                });
                for ev in past {
                    self.schema.check_vm(&ev.vm)?;
                    for (slot, &f) in ids.iter_mut().zip(&self.item_vm) {
                        slot.push(ev.vm[f] as usize);
                    }
                    labels.push(ev.label.min(1) as usize);
                }
            }
            let mut parts = Vec::with_capacity(self.item_vm.len());
            for (slot, &f) in ids.iter().zip(&self.item_vm) {
                parts.push(tape.gather_rows(tables[f], slot)?);
            }
            let raw = tape.concat_cols(&parts)?;
            let label_table = tape.param(store, "fm.hist.label")?;
            let lab = tape.gather_rows(label_table, &labels)?;
            let tokens = tape.add(raw, lab)?;
            let pooled = h.record(tape, store, tokens, Some(query), &segs)?;
            mlp_in = tape.concat_cols(&[emb_layer, pooled])?;
        }
        let layers = self.mlp.forward(tape, store, mlp_in)?;
        let w = tape.param(store, "fm.head.w")?;
        let b = tape.param(store, "fm.head.b")?;
        let logit = tape.affine(*layers.last().expect("fm has hidden layers"), w, b)?;
        let prob = tape.sigmoid(logit);
        Ok(FmGraph {
            prob,
            emb_layer,
            layers,
            item_emb,
        })
    }

    /// Probabilities and every named activation from one pass.
    pub fn forward(&self, store: &ParamStore, batch: &[FmInput]) -> Result<FmActivations> {
        let mut tape = Tape::new();
        let g = self.record(&mut tape, store, batch)?;
        Ok(FmActivations {
            prob: tape.value(g.prob).data().to_vec(),
            emb_layer: tape.value(g.emb_layer).clone(),
            layers: g.layers.iter().map(|&v| tape.value(v).clone()).collect(),
            item_emb: g.item_emb.map(|v| tape.value(v).clone()),
        })
    }

    /// Mean BCE of a batch against its labels, with gradients.
    pub fn loss_and_grads(&self, store: &ParamStore, batch: &[FmInput], labels: &[f64]) -> Result<(f64, crate::nncore::Grads)> {
        let mut tape = Tape::new();
        let g = self.record(&mut tape, store, batch)?;
        let loss = tape.bce(g.prob, labels)?;
        Ok((tape.scalar(loss), tape.backward(loss, store)?))
    }
}

/// Single-sample forward: `(ŷ_F, activations)`.
pub fn fm_forward(fm: &FmModel, store: &ParamStore, sample: &EventSample, history: &[HistEvent]) -> Result<(f64, FmActivations)> {
    let acts = fm.forward(
        store,
        &[FmInput {
            vm: &sample.vm,
            extra: &sample.extra,
            history,
        }],
    )?;
    Ok((acts.prob[0], acts))
}
