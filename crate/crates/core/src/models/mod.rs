//! Teacher and student networks, sequence pooling, embedding extraction, the joint loss,
//! and the `LFMM` checkpoint container.

mod checkpoint;
mod extract;
mod fm;
mod loss;
mod schema;
mod seqenc;
mod vm;

pub use checkpoint::{Checkpoint, MAGIC as LFMM_MAGIC, VERSION as LFMM_VERSION};
pub use extract::{extract_embedding, LayerSelector};
pub use fm::{fm_forward, FmActivations, FmConfig, FmGraph, FmInput, FmModel, HistEvent};
pub use loss::{joint_loss, record_joint_loss};
pub use schema::{FeatureSchema, SchemaFeature};
pub use seqenc::{seq_encode, stack_sequences, SeqEncoder, SeqEncoderKind, DIN_WIDTH};
pub use vm::{vm_forward, BranchConfig, VmConfig, VmInput, VmModel};

use crate::error::Result;
use crate::nncore::ParamStore;

impl FmModel {
    pub fn checkpoint(&self, params: &ParamStore) -> Checkpoint {
        Checkpoint {
            schema_hash: self.schema.hash(),
            meta: serde_json::json!({"kind": "fm", "schema": self.schema, "config": self.cfg}),
            params: params.clone(),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<(FmModel, ParamStore)> {
        let schema: FeatureSchema = c.meta_field("schema")?;
        c.expect_schema(&schema.hash())?;
        let fm = FmModel::new(schema, c.meta_field("config")?)?;
        Ok((fm, c.params.clone()))
    }
}

impl VmModel {
    pub fn checkpoint(&self, params: &ParamStore) -> Checkpoint {
        Checkpoint {
            schema_hash: self.schema.hash(),
            meta: serde_json::json!({"kind": "vm", "schema": self.schema, "config": self.cfg}),
            params: params.clone(),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<(VmModel, ParamStore)> {
        let schema: FeatureSchema = c.meta_field("schema")?;
        c.expect_schema(&schema.hash())?;
        let vm = VmModel::new(schema, c.meta_field("config")?)?;
        Ok((vm, c.params.clone()))
    }
}
