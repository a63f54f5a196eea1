use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use super::config::{Arm, TransferConfig, VmTrainConfig};
use crate::compression::{correlation_probe, prefix_cols, AeTrace, AeTrainConfig, MatryoshkaAe};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalResult};
use crate::models::{
    extract_embedding, BranchConfig, FeatureSchema, FmInput, FmModel, HistEvent, LayerSelector, VmConfig, VmInput,
    VmModel,
};
use crate::nncore::{AdamState, Matrix, ParamStore};
use crate::quantization::{fit_kmeans_int4, Codec};
use crate::seqstore::{SeqStore, SequenceFeature};
use crate::synthworld::{generate, EventLog, EventSample, WorldSpec};

const INFER_BATCH: usize = 256;

/// An event log with per-user histories for the FM's raw-ID attention.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub log: EventLog,
    /// Every feature of the log: VM-visible block, then all extras.
    pub schema: FeatureSchema,
    user_of: Vec<usize>,
    pos: Vec<usize>,
    hist: Vec<Vec<HistEvent>>,
}

impl Dataset {
    pub fn new(log: EventLog, schema: FeatureSchema) -> Result<Self> {
        if schema.m_s() != log.schema.vm_names.len() || schema.m_k() - schema.m_s() != log.schema.extra_names.len() {
            return Err(Error::Schema("feature schema does not match the log layout".into()));
        }
        if log.events.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
            return Err(Error::Data("events are not in chronological order".into()));
        }
        let mut users: BTreeMap<u64, usize> = BTreeMap::new();
        let (mut user_of, mut pos, mut hist) = (Vec::new(), Vec::new(), Vec::<Vec<HistEvent>>::new());
        for e in &log.events {
            schema.check_vm(&e.vm)?;
            schema.check_extra(&e.extra)?;
            let next = users.len();
            let u = *users.entry(e.key).or_insert(next);
            if u == hist.len() {
                hist.push(Vec::new());
            }
            user_of.push(u);
            pos.push(hist[u].len());
            hist[u].push(HistEvent::of(e));
        }
        Ok(Dataset {
            log,
            schema,
            user_of,
            pos,
            hist,
        })
    }

    pub fn from_world(spec: &WorldSpec, seed: u64) -> Result<Self> {
        Dataset::new(generate(spec, seed)?, FeatureSchema::from_world(spec)?)
    }

    pub fn events(&self) -> &[EventSample] {
        &self.log.events
    }

    /// Every earlier event of the same user, oldest first.
    pub fn history(&self, i: usize) -> &[HistEvent] {
        &self.hist[self.user_of[i]][..self.pos[i]]
    }

    pub fn indices(&self, chunks: RangeInclusive<u8>) -> Vec<usize> {
        (0..self.log.events.len()).filter(|&i| chunks.contains(&self.log.events[i].chunk)).collect()
    }

    pub fn labels(&self, idx: &[usize]) -> Vec<u8> {
        idx.iter().map(|&i| self.log.events[i].label).collect()
    }

    /// Schema restricted to the VM block plus the chosen extras (positions within the extra block).
    pub fn fm_schema(&self, extras: &[usize]) -> Result<FeatureSchema> {
        let ext = self.schema.extra_features();
        if let Some(&bad) = extras.iter().find(|&&j| j >= ext.len()) {
            return Err(Error::config(format!("extra feature {bad} does not exist")));
        }
        let mut f = self.schema.vm_features().to_vec();
        f.extend(extras.iter().map(|&j| ext[j].clone()));
        FeatureSchema::new(f)
    }

    pub fn all_extras(&self) -> Vec<usize> {
        (0..self.schema.m_k() - self.schema.m_s()).collect()
    }
}

/// A trained teacher and the extra features it reads.
#[derive(Clone, Debug)]
pub struct TrainedFm {
    pub model: FmModel,
    pub params: ParamStore,
    pub extras: Vec<usize>,
    /// Mean training BCE of each epoch.
    pub epoch_losses: Vec<f64>,
}

fn project(e: &EventSample, extras: &[usize]) -> Vec<u32> {
    extras.iter().map(|&j| e.extra[j]).collect()
}

impl TrainedFm {
    fn inputs<'a>(&self, ds: &'a Dataset, idx: &[usize], proj: &'a [Vec<u32>]) -> Vec<FmInput<'a>> {
        idx.iter()
            .zip(proj)
            .map(|(&i, x)| FmInput {
                vm: &ds.log.events[i].vm,
                extra: x,
                history: ds.history(i),
            })
            .collect()
    }

    /// `(ŷ_F, raw embedding)` for every event in `idx`.
    pub fn log(&self, ds: &Dataset, idx: &[usize], sel: LayerSelector) -> Result<FmLog> {
        let width = sel.width(&self.model)?;
        let mut soft = Vec::with_capacity(idx.len());
        let mut data = Vec::with_capacity(idx.len() * width);
        for chunk in idx.chunks(INFER_BATCH) {
            let proj: Vec<Vec<u32>> = chunk.iter().map(|&i| project(&ds.log.events[i], &self.extras)).collect();
            let acts = self.model.forward(&self.params, &self.inputs(ds, chunk, &proj))?;
            data.extend_from_slice(extract_embedding(&acts, sel)?.data());
            soft.extend_from_slice(&acts.prob);
        }
        Ok(FmLog {
            indices: idx.to_vec(),
            soft,
            emb: Matrix::from_vec(idx.len(), width, data)?,
        })
    }

    pub fn evaluate(&self, ds: &Dataset, idx: &[usize]) -> Result<EvalResult> {
        let l = self.log(ds, idx, LayerSelector::SoftlabelOnly)?;
        evaluate(&l.soft, &ds.labels(idx))
    }
}

/// Adam on BCE over `chunks`, in temporal order, for `epochs` passes.
pub fn train_fm(
    ds: &Dataset,
    cfg: &super::config::FmTrainConfig,
    chunks: RangeInclusive<u8>,
    extras: &[usize],
    seed: u64,
) -> Result<TrainedFm> {
    let model = FmModel::new(ds.fm_schema(extras)?, cfg.model())?;
    let mut tf = TrainedFm {
        params: model.init(seed)?,
        model,
        extras: extras.to_vec(),
        epoch_losses: Vec::new(),
    };
    let idx = ds.indices(chunks);
    if idx.is_empty() {
        return Err(Error::Data("no events in the FM training chunks".into()));
    }
    let mut adam = AdamState::new(&tf.params, cfg.lr);
    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        for chunk in idx.chunks(cfg.batch) {
            let proj: Vec<Vec<u32>> = chunk.iter().map(|&i| project(&ds.log.events[i], extras)).collect();
            let labels: Vec<f64> = chunk.iter().map(|&i| ds.log.events[i].label as f64).collect();
            let (l, g) = tf.model.loss_and_grads(&tf.params, &tf.inputs(ds, chunk, &proj), &labels)?;
            adam.step(&mut tf.params, &g)?;
            total += l * chunk.len() as f64;
        }
        tf.epoch_losses.push(total / idx.len() as f64);
    }
    Ok(tf)
}

/// What the FM logged: soft labels and raw embeddings, aligned with `indices`.
#[derive(Clone, Debug, PartialEq)]
pub struct FmLog {
    pub indices: Vec<usize>,
    pub soft: Vec<f64>,
    pub emb: Matrix,
}

impl FmLog {
    fn rows_where(&self, ds: &Dataset, chunk: u8) -> Vec<usize> {
        (0..self.indices.len()).filter(|&r| ds.log.events[self.indices[r]].chunk == chunk).collect()
    }

    /// Soft label per event index of the dataset; `NaN` where nothing was logged.
    pub fn soft_by_event(&self, n_events: usize) -> Vec<f64> {
        let mut out = vec![f64::NAN; n_events];
        for (&i, &p) in self.indices.iter().zip(&self.soft) {
            out[i] = p;
        }
        out
    }
}

fn select_rows(m: &Matrix, rows: &[usize]) -> Result<Matrix> {
    Matrix::from_rows(&rows.iter().map(|&r| m.row(r).to_vec()).collect::<Vec<_>>())
}

/// Compressed, quantized codes of a log and the store holding them.
#[derive(Clone, Debug)]
pub struct Transfer {
    pub ae: Option<(MatryoshkaAe, ParamStore, AeTrace)>,
    /// Stored prefix `z_{1:d}` per logged event, aligned with the log.
    pub codes: Matrix,
    pub codec: Codec,
    pub store: SeqStore,
    pub summary: TransferSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferSummary {
    pub raw_dim: usize,
    pub code_dim: usize,
    /// Per-coordinate reconstruction MSE of each Matryoshka prefix on the AE chunk.
    pub prefix_mse: Vec<(usize, f64)>,
    pub codec: String,
    pub codec_mse: f64,
    pub probe_rho: f64,
}

/// Rows of the log that fall in `fit_chunk`.
pub fn fit_rows(ds: &Dataset, log: &FmLog, fit_chunk: u8) -> Result<Vec<usize>> {
    let rows = log.rows_where(ds, fit_chunk);
    if rows.is_empty() {
        return Err(Error::Data(format!("no logged events in chunk {fit_chunk}")));
    }
    Ok(rows)
}

/// Trains the Matryoshka AE on the `fit_chunk` rows; `None` for `softlabel_only`.
pub fn fit_ae(
    ds: &Dataset,
    log: &FmLog,
    t: &TransferConfig,
    ae_hp: &AeTrainConfig,
    fit_chunk: u8,
    seed: u64,
) -> Result<Option<(MatryoshkaAe, ParamStore, AeTrace)>> {
    let rows = fit_rows(ds, log, fit_chunk)?;
    if t.selector == LayerSelector::SoftlabelOnly {
        return Ok(None);
    }
    let ae = MatryoshkaAe::new(log.emb.cols(), &t.dims, false)?;
    let fit = select_rows(&log.emb, &rows)?;
    let (params, trace) = ae.train(&fit, &AeTrainConfig { seed, ..ae_hp.clone() })?;
    Ok(Some((ae, params, trace)))
}

/// Stored code `z_{1:d}` per logged row, or `2p - 1` without an AE.
pub fn encode_log(log: &FmLog, t: &TransferConfig, ae: Option<(&MatryoshkaAe, &ParamStore)>) -> Result<Matrix> {
    match ae {
        None => Ok(Matrix::column(&log.soft.iter().map(|p| 2.0 * p - 1.0).collect::<Vec<_>>())),
        Some((ae, params)) => Ok(prefix_cols(&ae.encode(params, &log.emb)?, t.d)),
    }
}

/// The configured codec; k-means codebooks are fitted on the `fit_chunk` codes.
pub fn fit_codec(ds: &Dataset, log: &FmLog, codes: &Matrix, t: &TransferConfig, fit_chunk: u8, seed: u64) -> Result<Codec> {
    if t.codec == "int4_kmeans" {
        fit_kmeans_int4(&fit_values(ds, log, codes, fit_chunk)?, 50, seed)
    } else {
        Codec::parse(&t.codec)
    }
}

fn fit_values(ds: &Dataset, log: &FmLog, codes: &Matrix, fit_chunk: u8) -> Result<Vec<f64>> {
    Ok(fit_rows(ds, log, fit_chunk)?.iter().flat_map(|&r| codes.row(r).to_vec()).collect())
}

/// Appends one quantized record per logged event.
pub fn build_store(ds: &Dataset, log: &FmLog, codes: &Matrix, codec: &Codec) -> Result<SeqStore> {
    if codes.rows() != log.indices.len() {
        return Err(Error::dim(format!("{} codes for {} logged events", codes.rows(), log.indices.len())));
    }
    let mut store = SeqStore::new(codes.cols(), codec.clone());
    for (r, &i) in log.indices.iter().enumerate() {
        let e = &ds.log.events[i];
        store.append_vector(e.key, e.timestamp, codes.row(r), Some(log.soft[r]))?;
    }
    Ok(store)
}

/// AE, codes, codec and store in one go; `codec` overrides fitting a new one.
pub fn fit_transfer(
    ds: &Dataset,
    log: &FmLog,
    t: &TransferConfig,
    ae_hp: &AeTrainConfig,
    fit_chunk: u8,
    codec: Option<&Codec>,
    seed: u64,
) -> Result<Transfer> {
    let ae = fit_ae(ds, log, t, ae_hp, fit_chunk, seed)?;
    let codes = encode_log(log, t, ae.as_ref().map(|(a, p, _)| (a, p)))?;
    let prefix_mse = match &ae {
        Some((a, p, _)) => a.prefix_mse(p, &select_rows(&log.emb, &fit_rows(ds, log, fit_chunk)?)?)?,
        None => vec![],
    };
    let codec = match codec {
        Some(c) => c.clone(),
        None => fit_codec(ds, log, &codes, t, fit_chunk, seed)?,
    };
    let codec_mse = codec.mse(&fit_values(ds, log, &codes, fit_chunk)?);
    let store = build_store(ds, log, &codes, &codec)?;
    let labels = ds.labels(&log.indices);
    let probe_rho = correlation_probe(&codes, &log.soft, &labels).map_or(f64::NAN, |p| p.rho);
    Ok(Transfer {
        summary: TransferSummary {
            raw_dim: log.emb.cols(),
            code_dim: codes.cols(),
            prefix_mse,
            codec: codec.name().into(),
            codec_mse,
            probe_rho,
        },
        ae,
        codes,
        codec,
        store,
    })
}

/// Per-chunk stores holding only the records logged in that chunk.
pub fn split_store(ds: &Dataset, store: &SeqStore) -> BTreeMap<u8, SeqStore> {
    let chunk_of: BTreeMap<(u64, i64), u8> = ds.log.events.iter().map(|e| ((e.key, e.timestamp), e.chunk)).collect();
    let mut out: BTreeMap<u8, SeqStore> = BTreeMap::new();
    for r in store.records() {
        let c = chunk_of.get(&(r.key, r.timestamp)).copied().unwrap_or(0);
        out.entry(c)
            .or_insert_with(|| SeqStore::new(store.dim(), store.codec().clone()))
            .append(r.clone())
            .expect("record from a store of the same dim and codec");
    }
    out
}

/// Inputs the VM sees besides ids.
pub struct VmContext<'a> {
    pub soft: &'a [f64],
    pub store: Option<&'a SeqStore>,
    pub transfer: &'a TransferConfig,
}

impl VmContext<'_> {
    fn sequences(&self, ds: &Dataset, idx: &[usize]) -> Option<Vec<SequenceFeature>> {
        let store = self.store?;
        Some(
            idx.iter()
                .map(|&i| {
                    let e = &ds.log.events[i];
                    store.build_sequence(e.key, e.timestamp, self.transfer.seq_len, self.transfer.window_ticks())
                })
                .collect(),
        )
    }
}

fn vm_model(ds: &Dataset, arm: Arm, cfg: &VmTrainConfig, ctx: &VmContext) -> Result<VmModel> {
    let branch = if arm.uses_sequence() {
        let store = ctx
            .store
            .ok_or_else(|| Error::config(format!("arm `{}` needs an embedding store", arm.name())))?;
        Some(BranchConfig {
            seq_dim: store.dim(),
            encoder: cfg.encoder,
        })
    } else {
        None
    };
    VmModel::new(
        ds.schema.clone(),
        VmConfig {
            d_emb: cfg.d_emb,
            hidden: cfg.hidden.clone(),
            branch,
        },
    )
}

fn batch_inputs<'a>(ds: &'a Dataset, idx: &[usize], seqs: &'a Option<Vec<SequenceFeature>>) -> Vec<VmInput<'a>> {
    idx.iter()
        .enumerate()
        .map(|(k, &i)| VmInput {
            vm: &ds.log.events[i].vm,
            seq: seqs.as_ref().map(|s| &s[k]),
        })
        .collect()
}

/// One pass over `train` in the given order.
pub fn train_vm(
    ds: &Dataset,
    arm: Arm,
    cfg: &VmTrainConfig,
    ctx: &VmContext,
    train: &[usize],
    seed: u64,
) -> Result<(VmModel, ParamStore)> {
    let model = vm_model(ds, arm, cfg, ctx)?;
    let mut params = model.init(seed)?;
    let lambda = if arm.uses_kd() { ctx.transfer.lambda } else { 0.0 };
    let store = if arm.uses_sequence() { ctx.store } else { None };
    let ctx = VmContext { store, ..*ctx };
    let mut adam = AdamState::new(&params, cfg.lr);
    for chunk in train.chunks(cfg.batch) {
        let labels: Vec<f64> = chunk.iter().map(|&i| ds.log.events[i].label as f64).collect();
        let soft: Vec<f64> = if lambda > 0.0 {
            chunk
                .iter()
                .map(|&i| {
                    let p = ctx.soft[i];
                    if p.is_nan() {
                        Err(Error::Data(format!("no soft label for event {i}")))
                    } else {
                        Ok(p)
                    }
                })
                .collect::<Result<_>>()?
        } else {
            labels.clone()
        };
        let seqs = ctx.sequences(ds, chunk);
        let (_, g) = model.loss_and_grads(&params, &batch_inputs(ds, chunk, &seqs), &labels, &soft, lambda)?;
        adam.step(&mut params, &g)?;
    }
    Ok((model, params))
}

pub fn predict_vm(
    ds: &Dataset,
    model: &VmModel,
    params: &ParamStore,
    store: Option<&SeqStore>,
    transfer: &TransferConfig,
    idx: &[usize],
) -> Result<Vec<f64>> {
    let ctx = VmContext {
        soft: &[],
        store: if model.has_branch() { store } else { None },
        transfer,
    };
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(INFER_BATCH) {
        let seqs = ctx.sequences(ds, chunk);
        out.extend(model.predict(params, &batch_inputs(ds, chunk, &seqs))?);
    }
    Ok(out)
}
