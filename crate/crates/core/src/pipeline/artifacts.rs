//! `LFMM` encodings of the intermediate stage outputs.

use serde_json::json;

use super::stages::{FmLog, TrainedFm};
use crate::error::{Error, Result};
use crate::models::{Checkpoint, FmModel, LayerSelector};
use crate::nncore::{Matrix, ParamStore};
use crate::quantization::Codec;

fn expect_kind(c: &Checkpoint, kind: &str) -> Result<()> {
    let got: String = c.meta_field("kind")?;
    if got != kind {
        return Err(Error::format(0, format!("expected a `{kind}` checkpoint, found `{got}`")));
    }
    Ok(())
}

impl TrainedFm {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = self.model.checkpoint(&self.params);
        c.meta["extras"] = json!(self.extras);
        c.meta["epoch_losses"] = json!(self.epoch_losses);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<TrainedFm> {
        expect_kind(c, "fm")?;
        let (model, params) = FmModel::from_checkpoint(c)?;
        Ok(TrainedFm {
            model,
            params,
            extras: c.meta_field("extras")?,
            epoch_losses: c.meta_field("epoch_losses")?,
        })
    }
}

impl FmLog {
    /// Stored against the dataset's schema hash; indices are kept as exact small integers.
    pub fn to_checkpoint(&self, schema_hash: [u8; 32], sel: LayerSelector) -> Result<Checkpoint> {
        let mut params = ParamStore::new();
        params.insert("emb", self.emb.clone())?;
        params.insert("index", Matrix::column(&self.indices.iter().map(|&i| i as f64).collect::<Vec<_>>()))?;
        params.insert("soft", Matrix::column(&self.soft))?;
        Ok(Checkpoint {
            schema_hash,
            meta: json!({"kind": "fm_log", "selector": sel}),
            params,
        })
    }

    pub fn from_checkpoint(c: &Checkpoint, schema_hash: &[u8; 32]) -> Result<(FmLog, LayerSelector)> {
        expect_kind(c, "fm_log")?;
        c.expect_schema(schema_hash)?;
        let emb = c.params.get("emb")?.clone();
        let index = c.params.get("index")?.data();
        let soft = c.params.get("soft")?.data().to_vec();
        if index.len() != emb.rows() || soft.len() != emb.rows() {
            return Err(Error::format(0, "log columns disagree in length"));
        }
        let indices = index
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::format(0, format!("bad event index {v}")))
                }
            })
            .collect::<Result<_>>()?;
        Ok((FmLog { indices, soft, emb }, c.meta_field("selector")?))
    }
}

/// Per-event codes (pre-quantization) together with the codec that stores them.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeSet {
    pub codes: Matrix,
    pub codec: Codec,
}

impl CodeSet {
    pub fn to_checkpoint(&self, schema_hash: [u8; 32]) -> Result<Checkpoint> {
        let mut params = ParamStore::new();
        params.insert("codes", self.codes.clone())?;
        Ok(Checkpoint {
            schema_hash,
            meta: json!({"kind": "codes", "codec": self.codec}),
            params,
        })
    }

    pub fn from_checkpoint(c: &Checkpoint, schema_hash: &[u8; 32]) -> Result<CodeSet> {
        expect_kind(c, "codes")?;
        c.expect_schema(schema_hash)?;
        Ok(CodeSet {
            codes: c.params.get("codes")?.clone(),
            codec: c.meta_field("codec")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_and_codes_round_trip() {
        let log = FmLog {
            indices: vec![3, 7, 11],
            soft: vec![0.1, 0.5, 0.9],
            emb: Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap(),
        };
        let h = [7u8; 32];
        let c = log.to_checkpoint(h, LayerSelector::Deep).unwrap();
        let bytes = c.to_bytes();
        let (back, sel) = FmLog::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap(), &h).unwrap();
        assert_eq!(back, log);
        assert_eq!(sel, LayerSelector::Deep);
        assert!(FmLog::from_checkpoint(&c, &[0u8; 32]).is_err());

        let cs = CodeSet {
            codes: log.emb.clone(),
            codec: Codec::kmeans((0..16).map(|i| i as f64 / 8.0 - 1.0).collect()).unwrap(),
        };
        let cc = cs.to_checkpoint(h).unwrap();
        assert_eq!(CodeSet::from_checkpoint(&cc, &h).unwrap(), cs);
        assert!(CodeSet::from_checkpoint(&c, &h).is_err());
    }
}
