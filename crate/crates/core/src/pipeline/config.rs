use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compression::AeTrainConfig;
use crate::error::{Error, Result};
use crate::models::{FmConfig, LayerSelector, SeqEncoderKind};
use crate::synthworld::DAY_TICKS;

/// Chunks the FM trains on; it logs on every later chunk.
pub const FM_TRAIN_CHUNKS: std::ops::RangeInclusive<u8> = 1..=4;
/// Chunk whose embeddings train the autoencoder and the k-means codebook.
pub const AE_CHUNK: u8 = 5;
/// One streaming pass of every VM arm.
pub const VM_TRAIN_CHUNKS: std::ops::RangeInclusive<u8> = 5..=7;
pub const TEST_CHUNK: u8 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Baseline,
    Kd,
    Loopfm,
    KdLoopfm,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Baseline, Arm::Kd, Arm::Loopfm, Arm::KdLoopfm];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::Kd => "kd",
            Arm::Loopfm => "loopfm",
            Arm::KdLoopfm => "kd_loopfm",
        }
    }

    pub fn uses_kd(self) -> bool {
        matches!(self, Arm::Kd | Arm::KdLoopfm)
    }

    pub fn uses_sequence(self) -> bool {
        matches!(self, Arm::Loopfm | Arm::KdLoopfm)
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown arm `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointPolicy {
    /// One FM trained on chunks 1-4 logs every later chunk.
    Fixed,
    /// A fresh FM, trained on the four chunks before it, logs each chunk.
    PerSplit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Seed of the generative law; each experiment seed draws its own log from it.
    pub world_seed: u64,
    pub n_users: Option<usize>,
    pub events_per_user: Option<usize>,
    pub label_noise: Option<f64>,
    /// Replaces the synthetic world with an ingested event log.
    pub event_log: Option<PathBuf>,
    /// Item-side and user-side feature names for ingested logs.
    pub item_features: Vec<String>,
    pub user_features: Vec<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            world_seed: 1,
            n_users: None,
            events_per_user: None,
            label_noise: None,
            event_log: None,
            item_features: vec![],
            user_features: vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FmTrainConfig {
    pub d_emb: usize,
    pub hidden: Vec<usize>,
    pub history_len: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for FmTrainConfig {
    fn default() -> Self {
        let m = FmConfig::default();
        FmTrainConfig {
            d_emb: m.d_emb,
            hidden: m.hidden,
            history_len: m.history_len,
            epochs: 3,
            batch: 64,
            lr: 5e-3,
        }
    }
}

impl FmTrainConfig {
    pub fn model(&self) -> FmConfig {
        FmConfig {
            d_emb: self.d_emb,
            hidden: self.hidden.clone(),
            history_len: self.history_len,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VmTrainConfig {
    pub d_emb: usize,
    pub hidden: Vec<usize>,
    pub encoder: SeqEncoderKind,
    pub batch: usize,
    pub lr: f64,
}

impl Default for VmTrainConfig {
    fn default() -> Self {
        VmTrainConfig {
            d_emb: 4,
            hidden: vec![32, 16],
            encoder: SeqEncoderKind::MeanPool,
            batch: 32,
            lr: 5e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub selector: LayerSelector,
    /// Matryoshka prefix set.
    pub dims: Vec<usize>,
    /// Prefix actually stored.
    pub d: usize,
    /// `fp32`, `int8`, `int4` or `int4_kmeans`.
    pub codec: String,
    pub seq_len: usize,
    pub window_days: f64,
    pub lambda: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            selector: LayerSelector::Hidden0,
            dims: vec![8, 16, 32],
            d: 32,
            codec: "int4_kmeans".into(),
            seq_len: 50,
            window_days: 30.0,
            lambda: 1.0,
        }
    }
}

impl TransferConfig {
    pub fn window_ticks(&self) -> i64 {
        (self.window_days * DAY_TICKS as f64).round() as i64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub battery_seed: u64,
    pub battery_size: usize,
    pub deltas: Vec<usize>,
    pub grid_points: usize,
    pub l_max: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        TheoryConfig {
            battery_seed: 7,
            battery_size: 20,
            deltas: vec![1, 2, 4, 8],
            grid_points: 64,
            l_max: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub fm: FmTrainConfig,
    pub vm: VmTrainConfig,
    pub ae: AeTrainConfig,
    pub transfer: TransferConfig,
    pub checkpoint: CheckpointPolicy,
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub theory: TheoryConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataConfig::default(),
            fm: FmTrainConfig::default(),
            vm: VmTrainConfig::default(),
            ae: AeTrainConfig::default(),
            transfer: TransferConfig::default(),
            checkpoint: CheckpointPolicy::Fixed,
            arms: Arm::ALL.to_vec(),
            seeds: vec![1, 2, 3, 4, 5],
            output_dir: None,
            theory: TheoryConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.transfer;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must be nonempty"));
        }
        if self.arms.is_empty() {
            return Err(Error::config("arms must be nonempty"));
        }
        if !(t.lambda >= 0.0 && t.lambda.is_finite()) {
            return Err(Error::config("lambda must be finite and ≥ 0"));
        }
        if t.selector != LayerSelector::SoftlabelOnly && !t.dims.contains(&t.d) {
            return Err(Error::config(format!("stored prefix d = {} is not in dims {:?}", t.d, t.dims)));
        }
        if self.arms.iter().any(|a| a.uses_sequence()) && (t.seq_len == 0 || !(t.window_days > 0.0)) {
            return Err(Error::config("sequence arms need seq_len ≥ 1 and a positive window"));
        }
        if !["fp32", "int8", "int8_uniform", "int4", "int4_uniform", "int4_kmeans"].contains(&t.codec.as_str()) {
            return Err(Error::config(format!("unknown codec `{}`", t.codec)));
        }
        if self.fm.batch == 0 || self.vm.batch == 0 || !(self.fm.lr > 0.0) || !(self.vm.lr > 0.0) {
            return Err(Error::config("batch sizes must be ≥ 1 and learning rates positive"));
        }
        if FM_TRAIN_CHUNKS.contains(VM_TRAIN_CHUNKS.start()) || VM_TRAIN_CHUNKS.contains(&TEST_CHUNK) {
            return Err(Error::config("chunk protocol overlaps"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
