use serde::{Deserialize, Serialize};

use super::fm::{FmActivations, FmModel};
use crate::error::{Error, Result};
use crate::nncore::Matrix;

/// Which FM activations form the transferred embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSelector {
    EmbLayer,
    Hidden0,
    Hidden1,
    Deep,
    AllJoint,
    SoftlabelOnly,
    ItemOnly,
}

impl LayerSelector {
    pub const ALL: [LayerSelector; 7] = [
        LayerSelector::EmbLayer,
        LayerSelector::Hidden0,
        LayerSelector::Hidden1,
        LayerSelector::Deep,
        LayerSelector::AllJoint,
        LayerSelector::SoftlabelOnly,
        LayerSelector::ItemOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerSelector::EmbLayer => "emb_layer",
            LayerSelector::Hidden0 => "hidden_0",
            LayerSelector::Hidden1 => "hidden_1",
            LayerSelector::Deep => "deep",
            LayerSelector::AllJoint => "all_joint",
            LayerSelector::SoftlabelOnly => "softlabel_only",
            LayerSelector::ItemOnly => "item_only",
        }
    }

    /// Embedding width `D` this selector yields for `fm`.
    pub fn width(self, fm: &FmModel) -> Result<usize> {
        let h = &fm.cfg.hidden;
        let layer = |i: usize| {
            (i + 1 < h.len())
                .then(|| h[i])
                .ok_or_else(|| Error::config(format!("fm has no hidden_{i} layer")))
        };
        Ok(match self {
            LayerSelector::EmbLayer => fm.emb_width(),
            LayerSelector::Hidden0 => layer(0)?,
            LayerSelector::Hidden1 => layer(1)?,
            LayerSelector::Deep => *h.last().expect("nonempty"),
            LayerSelector::AllJoint => fm.emb_width() + h.iter().sum::<usize>(),
            LayerSelector::SoftlabelOnly => 1,
            LayerSelector::ItemOnly => match fm.item_width() {
                0 => return Err(Error::config("item_only needs item-side features")),
                w => w,
            },
        })
    }
}

impl std::str::FromStr for LayerSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LayerSelector::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::config(format!("unknown layer selector `{s}`")))
    }
}

impl std::fmt::Display for LayerSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Raw embeddings `e`, one row per sample.
pub fn extract_embedding(acts: &FmActivations, sel: LayerSelector) -> Result<Matrix> {
    let need = |name: &str| acts.get(name).ok_or_else(|| Error::config(format!("activation `{name}` missing")));
    Ok(match sel {
        LayerSelector::EmbLayer => acts.emb_layer.clone(),
        LayerSelector::Hidden0 => need("hidden_0")?.clone(),
        LayerSelector::Hidden1 => need("hidden_1")?.clone(),
        LayerSelector::Deep => need("deep")?.clone(),
        LayerSelector::AllJoint => {
            let parts: Vec<&Matrix> = std::iter::once(&acts.emb_layer).chain(&acts.layers).collect();
            let rows = acts.emb_layer.rows();
            let cols = parts.iter().map(|m| m.cols()).sum();
            let mut out = Matrix::zeros(rows, cols);
            for r in 0..rows {
                let mut off = 0;
                for m in &parts {
                    out.row_mut(r)[off..off + m.cols()].copy_from_slice(m.row(r));
                    off += m.cols();
                }
            }
            out
        }
        LayerSelector::SoftlabelOnly => Matrix::column(&acts.prob),
        LayerSelector::ItemOnly => acts
            .item_emb
            .clone()
            .ok_or_else(|| Error::config("no item-side features"))?,
    })
}
