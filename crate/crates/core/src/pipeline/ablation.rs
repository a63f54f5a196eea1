use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{Arm, CheckpointPolicy, ExperimentConfig, FM_TRAIN_CHUNKS};
use super::experiment::{load_dataset, log_and_transfer, run_arms, world_spec};
use super::stages::{train_fm, Dataset, TrainedFm};
use crate::error::{Error, Result};
use crate::infotheory::worlds::run_delta_sweep;
use crate::metrics::{transfer_ratio, EvalResult};
use crate::models::LayerSelector;
use crate::nncore::stream_rng;
use crate::synthworld::{FeatureSpec, Owner, Side, WorldSpec};
use rand_distr::{Distribution, Normal};

pub const SEQLEN_VALUES: [usize; 5] = [10, 25, 50, 75, 100];
pub const DIM_VALUES: [usize; 5] = [8, 16, 32, 64, 128];
pub const CODEC_VALUES: [&str; 4] = ["fp32", "int8", "int4", "int4_kmeans"];
pub const SWEEP_DELTAS: [usize; 4] = [1, 2, 4, 8];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Layer,
    Seqlen,
    Dim,
    Checkpoint,
    Codec,
    Deltasweep,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 6] = [
        AblationAxis::Layer,
        AblationAxis::Seqlen,
        AblationAxis::Dim,
        AblationAxis::Checkpoint,
        AblationAxis::Codec,
        AblationAxis::Deltasweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Layer => "layer",
            AblationAxis::Seqlen => "seqlen",
            AblationAxis::Dim => "dim",
            AblationAxis::Checkpoint => "checkpoint",
            AblationAxis::Codec => "codec",
            AblationAxis::Deltasweep => "deltasweep",
        }
    }
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown ablation axis `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    pub seed: u64,
    /// The KD+LoopFM arm on the test chunk.
    pub eval: EvalResult,
    pub extras: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Settings in first-seen order.
    pub fn settings(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.setting) {
                out.push(r.setting.clone());
            }
        }
        out
    }

    fn mean(&self, setting: &str, f: impl Fn(&AblationRow) -> f64) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.setting == setting).map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn mean_auc(&self, setting: &str) -> Option<f64> {
        self.mean(setting, |r| r.eval.auc)
    }

    pub fn mean_extra(&self, setting: &str, key: &str) -> Option<f64> {
        self.mean(setting, |r| r.extras.get(key).copied().unwrap_or(f64::NAN))
    }
}

fn row(setting: impl Into<String>, seed: u64, eval: EvalResult, extras: &[(&str, f64)]) -> AblationRow {
    AblationRow {
        setting: setting.into(),
        seed,
        eval,
        extras: extras.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

fn kd_loopfm(ds: &Dataset, cfg: &ExperimentConfig, fm: &TrainedFm, seed: u64) -> Result<(EvalResult, super::experiment::Logged)> {
    let logged = log_and_transfer(ds, cfg, seed, Some(fm))?;
    let eval = run_arms(ds, cfg, &logged, &[Arm::KdLoopfm], seed)?.remove(0).eval;
    Ok((eval, logged))
}

/// One row per (setting, seed) with the KD+LoopFM arm's test metrics.
pub fn run_ablation(cfg: &ExperimentConfig, axis: AblationAxis) -> Result<AblationTable> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        if axis == AblationAxis::Deltasweep {
            rows.extend(delta_rows(cfg, seed)?);
            continue;
        }
        let ds = load_dataset(cfg, seed)?;
        let fm = train_fm(&ds, &cfg.fm, FM_TRAIN_CHUNKS, &ds.all_extras(), seed)?;
        match axis {
            AblationAxis::Layer => {
                for sel in LayerSelector::ALL {
                    let mut c = cfg.clone();
                    c.transfer.selector = sel;
                    let (eval, l) = kd_loopfm(&ds, &c, &fm, seed)?;
                    let d = l.transfer.raw_dim as f64;
                    rows.push(row(sel.name(), seed, eval, &[("raw_dim", d), ("probe_rho", l.transfer.probe_rho)]));
                }
            }
            AblationAxis::Seqlen => {
                let logged = log_and_transfer(&ds, cfg, seed, Some(&fm))?;
                for l in SEQLEN_VALUES {
                    let mut c = cfg.clone();
                    c.transfer.seq_len = l;
                    let eval = run_arms(&ds, &c, &logged, &[Arm::KdLoopfm], seed)?.remove(0).eval;
                    rows.push(row(l.to_string(), seed, eval, &[]));
                }
            }
            AblationAxis::Dim => {
                for d in DIM_VALUES {
                    let mut c = cfg.clone();
                    let mut dims = vec![8, 16, 32, d];
                    dims.sort_unstable();
                    dims.dedup();
                    c.transfer.dims = dims;
                    c.transfer.d = d;
                    let (eval, l) = kd_loopfm(&ds, &c, &fm, seed)?;
                    let mut extras: Vec<(String, f64)> =
                        l.transfer.prefix_mse.iter().map(|(k, m)| (format!("mse_{k}"), *m)).collect();
                    extras.push(("codec_mse".into(), l.transfer.codec_mse));
                    let ex: Vec<(&str, f64)> = extras.iter().map(|(k, v)| (k.as_str(), *v)).collect();
                    rows.push(row(d.to_string(), seed, eval, &ex));
                }
            }
            AblationAxis::Checkpoint => {
                for policy in [CheckpointPolicy::Fixed, CheckpointPolicy::PerSplit] {
                    let mut c = cfg.clone();
                    c.checkpoint = policy;
                    let (eval, l) = kd_loopfm(&ds, &c, &fm, seed)?;
                    let drift = l.drift()?;
                    let mean = drift.iter().map(|d| d.2).sum::<f64>() / drift.len().max(1) as f64;
                    let names: Vec<String> = drift.iter().map(|(a, b, _)| format!("drift_{a}_{b}")).collect();
                    let mut ex: Vec<(&str, f64)> = names.iter().zip(&drift).map(|(n, d)| (n.as_str(), d.2)).collect();
                    ex.push(("drift_mean", mean));
                    let name = if policy == CheckpointPolicy::Fixed { "fixed" } else { "per_split" };
                    rows.push(row(name, seed, eval, &ex));
                }
            }
            AblationAxis::Codec => {
                for codec in CODEC_VALUES {
                    let mut c = cfg.clone();
                    c.transfer.codec = codec.into();
                    let (eval, l) = kd_loopfm(&ds, &c, &fm, seed)?;
                    rows.push(row(codec, seed, eval, &[("codec_mse", l.transfer.codec_mse)]));
                }
            }
            AblationAxis::Deltasweep => unreachable!("handled above"),
        }
    }
    Ok(AblationTable { axis, rows })
}

/// Experiment world with one base extra and eight new user-level extras for the δ sweep.
pub fn delta_world(cfg: &ExperimentConfig) -> WorldSpec {
    let mut spec = world_spec(cfg);
    spec.features.retain(|f| f.owner == Owner::VmVisible || f.name == "segment");
    let mut rng = stream_rng(cfg.data.world_seed, "delta-world");
    let normal = Normal::new(0.0, 0.45).expect("valid scale");
    for j in 1..=SWEEP_DELTAS[SWEEP_DELTAS.len() - 1] {
        spec.features.push(FeatureSpec {
            name: format!("new{j}"),
            owner: Owner::FmExtra,
            side: Side::User,
            probs: vec![1.0 / 3.0; 3],
            weights: (0..3).map(|_| normal.sample(&mut rng)).collect(),
        });
    }
    spec
}

/// Empirical TR of FM₁ (base extra) → FM₂(δ) (base plus δ new extras), next to the exact TR_pop
/// and TR_LB(δ) of the enumerable sweep.
fn delta_rows(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<AblationRow>> {
    let ds = Dataset::from_world(&delta_world(cfg), seed)?;
    let theory = run_delta_sweep(&SWEEP_DELTAS)?;
    let fm1 = train_fm(&ds, &cfg.fm, FM_TRAIN_CHUNKS, &[0], seed)?;
    let (vm1, l1) = kd_loopfm(&ds, cfg, &fm1, seed)?;
    let mut rows = Vec::new();
    for (k, &delta) in SWEEP_DELTAS.iter().enumerate() {
        let extras: Vec<usize> = (0..=delta).collect();
        let fm2 = train_fm(&ds, &cfg.fm, FM_TRAIN_CHUNKS, &extras, seed)?;
        let (vm2, l2) = kd_loopfm(&ds, cfg, &fm2, seed)?;
        let mut extras = vec![
            ("ne_fm", l2.fm_test.ne),
            ("ne_fm_base", l1.fm_test.ne),
            ("ne_vm_base", vm1.ne),
            ("tr_pop", theory.tr_pop[k]),
            ("tr_lb", theory.tr_lb[k]),
        ];
        // Undefined when the two FMs tie on NE.
        if let Ok(tr) = transfer_ratio(vm1.ne, vm2.ne, l1.fm_test.ne, l2.fm_test.ne) {
            extras.push(("tr_empirical", tr));
        }
        rows.push(row(delta.to_string(), seed, vm2, &extras));
    }
    Ok(rows)
}
