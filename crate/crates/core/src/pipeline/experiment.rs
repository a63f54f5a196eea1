use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{Arm, CheckpointPolicy, ExperimentConfig, AE_CHUNK, FM_TRAIN_CHUNKS, TEST_CHUNK, VM_TRAIN_CHUNKS};
use super::stages::{fit_transfer, predict_vm, split_store, train_fm, train_vm, Dataset, TrainedFm, TransferSummary, VmContext};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalResult};
use crate::models::FeatureSchema;
use crate::nncore::splitmix64;
use crate::seqstore::{centroid_drift, SeqStore};
use crate::synthworld::{ingest_event_log, WorldSpec};

/// The synthetic world of a config, with its size overrides applied.
pub fn world_spec(cfg: &ExperimentConfig) -> WorldSpec {
    let mut spec = WorldSpec::default_experiment(cfg.data.world_seed);
    if let Some(n) = cfg.data.n_users {
        spec.n_users = n;
    }
    if let Some(n) = cfg.data.events_per_user {
        spec.events_per_user = n;
    }
    if let Some(e) = cfg.data.label_noise {
        spec.label_noise = e;
    }
    spec
}

/// The event log for one seed: an ingested file, or a fresh draw from the world.
pub fn load_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    match &cfg.data.event_log {
        Some(path) => {
            let (log, _warnings) = ingest_event_log(path)?;
            let schema = FeatureSchema::from_log(&log.schema, &cfg.data.item_features, &cfg.data.user_features)?;
            Dataset::new(log, schema)
        }
        None => Dataset::from_world(&world_spec(cfg), seed),
    }
}

pub(crate) fn split_seed(seed: u64, chunk: u8) -> u64 {
    splitmix64(seed ^ (0x5157_u64 << 8 | chunk as u64))
}

/// Everything the FM side hands to the VMs.
#[derive(Clone, Debug)]
pub struct Logged {
    /// Soft label per dataset event (`NaN` outside the logged chunks).
    pub soft: Vec<f64>,
    pub store: SeqStore,
    pub chunk_stores: BTreeMap<u8, SeqStore>,
    /// The chunks 1-4 teacher.
    pub fm: TrainedFm,
    pub fm_test: EvalResult,
    pub transfer: TransferSummary,
}

impl Logged {
    /// Centroid drift between consecutive logged chunks.
    pub fn drift(&self) -> Result<Vec<(u8, u8, f64)>> {
        let chunks: Vec<&u8> = self.chunk_stores.keys().collect();
        chunks
            .windows(2)
            .map(|w| Ok((*w[0], *w[1], centroid_drift(&self.chunk_stores[w[0]], &self.chunk_stores[w[1]])?)))
            .collect()
    }
}

/// Trains (or reuses) the teacher, logs chunks 5-8, fits AE and codec, fills the store.
pub fn log_and_transfer(ds: &Dataset, cfg: &ExperimentConfig, seed: u64, fm: Option<&TrainedFm>) -> Result<Logged> {
    let extras = ds.all_extras();
    let fm = match fm {
        Some(f) => f.clone(),
        None => train_fm(ds, &cfg.fm, FM_TRAIN_CHUNKS, &extras, seed)?,
    };
    let test_idx = ds.indices(TEST_CHUNK..=TEST_CHUNK);
    let logged_idx = ds.indices(AE_CHUNK..=TEST_CHUNK);
    match cfg.checkpoint {
        CheckpointPolicy::Fixed => {
            let log = fm.log(ds, &logged_idx, cfg.transfer.selector)?;
            let t = fit_transfer(ds, &log, &cfg.transfer, &cfg.ae, AE_CHUNK, None, seed)?;
            Ok(Logged {
                soft: log.soft_by_event(ds.events().len()),
                chunk_stores: split_store(ds, &t.store),
                fm_test: fm.evaluate(ds, &test_idx)?,
                store: t.store,
                transfer: t.summary,
                fm,
            })
        }
        CheckpointPolicy::PerSplit => {
            let mut soft = vec![f64::NAN; ds.events().len()];
            let mut chunk_stores = BTreeMap::new();
            let (mut codec, mut summary, mut fm_test) = (None, None, None);
            for c in AE_CHUNK..=TEST_CHUNK {
                let fresh;
                let fm_c = if c == AE_CHUNK {
                    &fm
                } else {
                    fresh = train_fm(ds, &cfg.fm, c - 4..=c - 1, &extras, split_seed(seed, c))?;
                    &fresh
                };
                let idx = ds.indices(c..=c);
                let log = fm_c.log(ds, &idx, cfg.transfer.selector)?;
                let t = fit_transfer(ds, &log, &cfg.transfer, &cfg.ae, c, codec.as_ref(), split_seed(seed, c))?;
                for (&i, &p) in log.indices.iter().zip(&log.soft) {
                    soft[i] = p;
                }
                if c == TEST_CHUNK {
                    fm_test = Some(fm_c.evaluate(ds, &test_idx)?);
                }
                codec.get_or_insert(t.codec.clone());
                summary.get_or_insert(t.summary);
                chunk_stores.insert(c, t.store);
            }
            let codec = codec.expect("at least one split");
            let mut store = SeqStore::new(chunk_stores[&AE_CHUNK].dim(), codec);
            for s in chunk_stores.values() {
                for r in s.records() {
                    store.append(r.clone())?;
                }
            }
            Ok(Logged {
                soft,
                store,
                chunk_stores,
                fm,
                fm_test: fm_test.expect("test split logged"),
                transfer: summary.expect("at least one split"),
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: Arm,
    pub eval: EvalResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub fm_epoch_losses: Vec<f64>,
    pub fm_test: EvalResult,
    pub transfer: TransferSummary,
    pub drift: Vec<(u8, u8, f64)>,
    pub arms: Vec<ArmResult>,
}

impl SeedReport {
    pub fn auc(&self, arm: Arm) -> Option<f64> {
        self.arms.iter().find(|a| a.arm == arm).map(|a| a.eval.auc)
    }
}

/// Trains and evaluates each requested arm against one logged run.
pub fn run_arms(ds: &Dataset, cfg: &ExperimentConfig, logged: &Logged, arms: &[Arm], seed: u64) -> Result<Vec<ArmResult>> {
    let train = ds.indices(VM_TRAIN_CHUNKS);
    let test = ds.indices(TEST_CHUNK..=TEST_CHUNK);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data("VM training or test chunk is empty".into()));
    }
    let ctx = VmContext {
        soft: &logged.soft,
        store: Some(&logged.store),
        transfer: &cfg.transfer,
    };
    let labels = ds.labels(&test);
    arms.iter()
        .map(|&arm| {
            let (model, params) = train_vm(ds, arm, &cfg.vm, &ctx, &train, seed)?;
            let preds = predict_vm(ds, &model, &params, Some(&logged.store), &cfg.transfer, &test)?;
            Ok(ArmResult {
                arm,
                eval: evaluate(&preds, &labels)?,
            })
        })
        .collect()
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedReport> {
    let ds = load_dataset(cfg, seed)?;
    let logged = log_and_transfer(&ds, cfg, seed, None)?;
    let arms = run_arms(&ds, cfg, &logged, &cfg.arms, seed)?;
    Ok(SeedReport {
        seed,
        fm_epoch_losses: logged.fm.epoch_losses.clone(),
        fm_test: logged.fm_test.clone(),
        transfer: logged.transfer.clone(),
        drift: logged.drift()?,
        arms,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub mean_auc: f64,
    pub mean_ne: f64,
}

/// Four-arm comparison across seeds, traceable to `(config_hash, seed)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub code_version: String,
    pub seeds: Vec<SeedReport>,
    pub summary: Vec<ArmSummary>,
    /// Seeds with AUC(kd_loopfm) > AUC(kd) > AUC(baseline), when all three arms ran.
    pub ordering_holds: Option<usize>,
    /// Mean AUC(kd_loopfm) − AUC(kd).
    pub mean_margin: Option<f64>,
}

impl RunReport {
    pub fn from_seeds(cfg: &ExperimentConfig, seeds: Vec<SeedReport>) -> RunReport {
        let n = seeds.len() as f64;
        let summary = cfg
            .arms
            .iter()
            .map(|&arm| {
                let evals: Vec<&EvalResult> = seeds
                    .iter()
                    .filter_map(|s| s.arms.iter().find(|a| a.arm == arm).map(|a| &a.eval))
                    .collect();
                ArmSummary {
                    arm,
                    mean_auc: evals.iter().map(|e| e.auc).sum::<f64>() / n,
                    mean_ne: evals.iter().map(|e| e.ne).sum::<f64>() / n,
                }
            })
            .collect();
        let triple: Option<Vec<(f64, f64, f64)>> = seeds
            .iter()
            .map(|s| Some((s.auc(Arm::KdLoopfm)?, s.auc(Arm::Kd)?, s.auc(Arm::Baseline)?)))
            .collect();
        let ordering_holds = triple.as_ref().map(|t| t.iter().filter(|(a, b, c)| a > b && b > c).count());
        let mean_margin = triple.map(|t| t.iter().map(|(a, b, _)| a - b).sum::<f64>() / n);
        RunReport {
            config_hash: cfg.hash(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            seeds,
            summary,
            ordering_holds,
            mean_margin,
        }
    }
}

pub fn run_streaming_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let seeds = cfg.seeds.iter().map(|&s| run_seed(cfg, s)).collect::<Result<Vec<_>>>()?;
    Ok(RunReport::from_seeds(cfg, seeds))
}
