//! Small deterministic FM → AE → quantizer chains evaluated over an enumerable world.

use crate::error::{Error, Result};
use crate::nncore::Matrix;
use crate::quantization::Codec;
use crate::synthworld::{Column, EventVals, Outcome, WorldSpec};

/// A per-event input read by the representation stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Field {
    Vm(usize),
    Extra(usize),
    Label,
}

/// One representation coordinate: a field with its values merged into groups.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldMap {
    pub field: Field,
    /// `groups[v]` is the group of value `v`.
    pub groups: Vec<u32>,
}

impl FieldMap {
    pub fn exact(field: Field, card: usize) -> FieldMap {
        FieldMap { field, groups: (0..card as u32).collect() }
    }

    pub fn n_groups(&self) -> u32 {
        self.groups.iter().max().map_or(1, |m| m + 1)
    }

    fn value(&self, ev: &EventVals) -> f64 {
        let v = match self.field {
            Field::Vm(i) => ev.vm[i],
            Field::Extra(j) => ev.extra[j],
            Field::Label => u32::from(ev.label),
        };
        let g = self.n_groups();
        if g <= 1 {
            0.0
        } else {
            f64::from(2 * self.groups[v as usize] + 1) / f64::from(g) - 1.0
        }
    }
}

/// Compression stage `E → Z`.
#[derive(Clone, Debug, PartialEq)]
pub enum AeMap {
    Identity,
    /// Snap each coordinate to `levels` evenly spaced points of `[-1, 1]`.
    Grid { levels: u32 },
    /// `z = tanh(e W)`.
    Tanh { weights: Matrix },
    /// Discards everything.
    Constant,
}

/// Quantization stage `Z → S`.
#[derive(Clone, Debug, PartialEq)]
pub enum QuantMap {
    /// `code = clamp(floor((z + 1) / 2 · 2^bits), 0, 2^bits - 1)`; codes at `b` bits are
    /// functions of codes at `b + 1` bits.
    Dyadic { bits: u32 },
    Codec(Codec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TheoryPipeline {
    pub fields: Vec<FieldMap>,
    pub ae: AeMap,
    pub quant: QuantMap,
    /// Extra features visible to this FM (world extra indices).
    pub fm_extras: Vec<usize>,
    /// Number of most recent past events kept in the sequence; `None` keeps all.
    pub seq_len: Option<usize>,
}

impl TheoryPipeline {
    /// Every VM feature, the label and the FM's extras, kept exactly.
    pub fn lossless(spec: &WorldSpec, fm_extras: &[usize]) -> TheoryPipeline {
        let vm_cards: Vec<usize> = spec.vm_features().map(|f| f.cardinality()).collect();
        let extra_cards: Vec<usize> = spec.extra_features().map(|f| f.cardinality()).collect();
        let mut fields: Vec<FieldMap> = vm_cards
            .iter()
            .enumerate()
            .map(|(i, &c)| FieldMap::exact(Field::Vm(i), c))
            .collect();
        fields.push(FieldMap::exact(Field::Label, 2));
        fields.extend(fm_extras.iter().map(|&j| FieldMap::exact(Field::Extra(j), extra_cards[j])));
        let max_card = fields.iter().map(|f| f.groups.len()).max().unwrap_or(2);
        TheoryPipeline {
            fields,
            ae: AeMap::Identity,
            quant: QuantMap::Dyadic { bits: (max_card as f64).log2().ceil().max(1.0) as u32 },
            fm_extras: fm_extras.to_vec(),
            seq_len: None,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.fields.len()
    }

    pub fn code_dim(&self) -> usize {
        match &self.ae {
            AeMap::Tanh { weights } => weights.cols(),
            AeMap::Constant => 1,
            _ => self.fields.len(),
        }
    }

    pub fn validate(&self, spec: &WorldSpec) -> Result<()> {
        let vm_cards: Vec<usize> = spec.vm_features().map(|f| f.cardinality()).collect();
        let extra_cards: Vec<usize> = spec.extra_features().map(|f| f.cardinality()).collect();
        if let Some(j) = self.fm_extras.iter().find(|&&j| j >= extra_cards.len()) {
            return Err(Error::config(format!("FM extra {j} does not exist")));
        }
        for f in &self.fields {
            let card = match f.field {
                Field::Vm(i) => *vm_cards
                    .get(i)
                    .ok_or_else(|| Error::config(format!("VM feature {i} does not exist")))?,
                Field::Extra(j) => {
                    if !self.fm_extras.contains(&j) {
                        return Err(Error::config(format!("extra {j} is not visible to this FM")));
                    }
                    extra_cards[j]
                }
                Field::Label => 2,
            };
            if f.groups.len() != card {
                return Err(Error::config(format!("field {:?} maps {} values, cardinality {card}", f.field, f.groups.len())));
            }
        }
        match &self.ae {
            AeMap::Grid { levels } if *levels < 2 => return Err(Error::config("grid needs at least 2 levels")),
            AeMap::Tanh { weights } if weights.rows() != self.embed_dim() => {
                return Err(Error::dim(format!("AE weights have {} rows for {} inputs", weights.rows(), self.embed_dim())))
            }
            _ => {}
        }
        match &self.quant {
            QuantMap::Dyadic { bits } if !(1..=16).contains(bits) => Err(Error::config("dyadic bits must be in 1..=16")),
            _ => Ok(()),
        }
    }

    pub fn embed(&self, ev: &EventVals) -> Vec<f64> {
        self.fields.iter().map(|f| f.value(ev)).collect()
    }

    pub fn compress(&self, e: &[f64]) -> Vec<f64> {
        match &self.ae {
            AeMap::Identity => e.to_vec(),
            AeMap::Grid { levels } => {
                let n = f64::from(levels - 1);
                e.iter().map(|&x| 2.0 * ((x.clamp(-1.0, 1.0) + 1.0) / 2.0 * n).round() / n - 1.0).collect()
            }
            AeMap::Tanh { weights } => (0..weights.cols())
                .map(|c| e.iter().enumerate().map(|(r, &x)| x * weights.get(r, c)).sum::<f64>().tanh())
                .collect(),
            AeMap::Constant => vec![0.0],
        }
    }

    pub fn quantize(&self, z: &[f64]) -> Vec<u64> {
        match &self.quant {
            QuantMap::Dyadic { bits } => {
                let top = (1u64 << bits) as f64;
                z.iter()
                    .map(|&x| (((x.clamp(-1.0, 1.0) + 1.0) / 2.0 * top).floor()).min(top - 1.0) as u64)
                    .collect()
            }
            QuantMap::Codec(c) => c.quantize(z).payload.iter().map(|&b| u64::from(b)).collect(),
        }
    }

    fn window<'o>(&self, o: &Outcome<'o>) -> &'o [EventVals] {
        let n = o.past.len();
        &o.past[n - self.seq_len.map_or(n, |l| l.min(n))..]
    }

    /// Columns `E{tag}`, `Z{tag}`, `S{tag}` and `XF{tag}` (raw FM extras of the sequence events).
    pub fn columns<'a>(&'a self, tag: &str) -> Vec<Column<'a>> {
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits);
        vec![
            Column::new(format!("E{tag}"), move |o| {
                self.window(o).iter().rev().flat_map(|e| bits(self.embed(e))).collect()
            }),
            Column::new(format!("Z{tag}"), move |o| {
                self.window(o).iter().rev().flat_map(|e| bits(self.compress(&self.embed(e)))).collect()
            }),
            Column::new(format!("S{tag}"), move |o| {
                self.window(o)
                    .iter()
                    .rev()
                    .flat_map(|e| self.quantize(&self.compress(&self.embed(e))))
                    .collect()
            }),
            Column::new(format!("XF{tag}"), move |o| {
                self.window(o)
                    .iter()
                    .rev()
                    .flat_map(|e| self.fm_extras.iter().map(move |&j| u64::from(e.extra[j])))
                    .collect()
            }),
        ]
    }
}
