use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::synthworld::{LogSchema, Owner, Side, WorldSpec};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaFeature {
    pub name: String,
    pub cardinality: usize,
    pub owner: Owner,
    pub side: Side,
}

/// Ordered features: the VM-visible block first, then the FM-only extras.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    features: Vec<SchemaFeature>,
}

impl FeatureSchema {
    /// Reorders `features` into the vm-then-extra layout and validates it.
    pub fn new(features: Vec<SchemaFeature>) -> Result<Self> {
        let (vm, extra): (Vec<_>, Vec<_>) = features.into_iter().partition(|f| f.owner == Owner::VmVisible);
        let features: Vec<SchemaFeature> = vm.into_iter().chain(extra).collect();
        let mut seen = std::collections::BTreeSet::new();
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature `{}`", f.name)));
            }
            if f.cardinality < 2 {
                return Err(Error::Schema(format!("feature `{}` has cardinality {}", f.name, f.cardinality)));
            }
        }
        let s = FeatureSchema { features };
        if s.m_s() == 0 || s.m_s() >= s.m_k() {
            return Err(Error::Schema(format!(
                "need 1 ≤ m_s < m_k, got m_s = {}, m_k = {}",
                s.m_s(),
                s.m_k()
            )));
        }
        Ok(s)
    }

    pub fn from_world(spec: &WorldSpec) -> Result<Self> {
        FeatureSchema::new(
            spec.features
                .iter()
                .map(|f| SchemaFeature {
                    name: f.name.clone(),
                    cardinality: f.cardinality(),
                    owner: f.owner,
                    side: f.side,
                })
                .collect(),
        )
    }

    /// Sides cannot be read from a log header; features named in `item` are item-side,
    /// those in `user` user-side, the rest context.
    pub fn from_log(log: &LogSchema, item: &[String], user: &[String]) -> Result<Self> {
        let side = |n: &str| {
            if item.iter().any(|i| i == n) {
                Side::Item
            } else if user.iter().any(|u| u == n) {
                Side::User
            } else {
                Side::Context
            }
        };
        let vm = log.vm_names.iter().zip(&log.vm_cards).map(|(n, &c)| (n, c, Owner::VmVisible));
        let extra = log.extra_names.iter().zip(&log.extra_cards).map(|(n, &c)| (n, c, Owner::FmExtra));
        FeatureSchema::new(
            vm.chain(extra)
                .map(|(n, c, owner)| SchemaFeature {
                    name: n.clone(),
                    cardinality: c,
                    owner,
                    side: side(n),
                })
                .collect(),
        )
    }

    pub fn features(&self) -> &[SchemaFeature] {
        &self.features
    }

    pub fn m_s(&self) -> usize {
        self.features.iter().filter(|f| f.owner == Owner::VmVisible).count()
    }

    pub fn m_k(&self) -> usize {
        self.features.len()
    }

    pub fn vm_features(&self) -> &[SchemaFeature] {
        &self.features[..self.m_s()]
    }

    pub fn extra_features(&self) -> &[SchemaFeature] {
        &self.features[self.m_s()..]
    }

    /// Positions (in the full vm-then-extra order) of item-side features.
    pub fn item_positions(&self) -> Vec<usize> {
        (0..self.m_k()).filter(|&i| self.features[i].side == Side::Item).collect()
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("schema serializes");
        Sha256::digest(&json).into()
    }

    pub fn check_vm(&self, vm: &[u32]) -> Result<()> {
        check_block(self.vm_features(), vm, "vm")
    }

    pub fn check_extra(&self, extra: &[u32]) -> Result<()> {
        check_block(self.extra_features(), extra, "extra")
    }
}

fn check_block(feats: &[SchemaFeature], ids: &[u32], what: &str) -> Result<()> {
    if ids.len() != feats.len() {
        return Err(Error::Schema(format!("{} {what} ids for {} features", ids.len(), feats.len())));
    }
    for (f, &v) in feats.iter().zip(ids) {
        if v as usize >= f.cardinality {
            return Err(Error::Schema(format!("`{}` id {v} outside cardinality {}", f.name, f.cardinality)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn world_schema_counts() {
        let s = FeatureSchema::from_world(&WorldSpec::default_experiment(1)).unwrap();
        assert_eq!((s.m_s(), s.m_k()), (4, 8));
        assert_eq!(s.item_positions(), vec![0, 1, 7]);
        assert!(s.check_vm(&[23, 3, 0, 2]).is_ok());
        assert!(matches!(s.check_vm(&[24, 0, 0, 0]), Err(Error::Schema(_))));
        assert!(matches!(s.check_extra(&[0, 0]), Err(Error::Schema(_))));
    }

    #[test]
    fn invariants_rejected() {
        let f = |n: &str, c, owner| SchemaFeature {
            name: n.into(),
            cardinality: c,
            owner,
            side: Side::Context,
        };
        assert!(FeatureSchema::new(vec![f("a", 2, Owner::VmVisible)]).is_err());
        assert!(FeatureSchema::new(vec![f("a", 1, Owner::VmVisible), f("b", 2, Owner::FmExtra)]).is_err());
        assert!(FeatureSchema::new(vec![f("a", 2, Owner::VmVisible), f("a", 2, Owner::FmExtra)]).is_err());
        let ok = FeatureSchema::new(vec![f("b", 3, Owner::FmExtra), f("a", 2, Owner::VmVisible)]).unwrap();
        assert_eq!(ok.features()[0].name, "a");
    }

    #[test]
    fn hash_tracks_content() {
        let a = FeatureSchema::from_world(&WorldSpec::default_experiment(1)).unwrap();
        let mut spec = WorldSpec::default_experiment(1);
        spec.features[0].probs = vec![1.0 / 25.0; 25];
        spec.features[0].weights = vec![0.0; 25];
        let b = FeatureSchema::from_world(&spec).unwrap();
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
