use crate::error::{Error, Result};

/// Largest dense table accepted.
pub const MAX_CELLS: usize = 1 << 26;

/// Probability mass function over a product of small discrete variables.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTable {
    names: Vec<String>,
    cards: Vec<usize>,
    probs: Vec<f64>,
}

impl JointTable {
    /// Builds a dense table; mass must sum to 1 within 1e-12.
    pub fn new(names: Vec<String>, cards: Vec<usize>, probs: Vec<f64>) -> Result<JointTable> {
        if names.len() != cards.len() {
            return Err(Error::Schema("names and cardinalities differ in length".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::Schema(format!("duplicate variable `{n}`")));
            }
        }
        let size = table_size(&cards)?;
        if probs.len() != size {
            return Err(Error::dim(format!("{} probabilities for {size} cells", probs.len())));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(Error::Numeric(format!("invalid probability {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Numeric(format!("total mass {total}")));
        }
        Ok(JointTable { names, cards, probs })
    }

    pub fn from_cells(
        names: Vec<String>,
        cards: Vec<usize>,
        cells: impl IntoIterator<Item = (Vec<usize>, f64)>,
    ) -> Result<JointTable> {
        let size = table_size(&cards)?;
        let strides = strides(&cards);
        let mut probs = vec![0.0; size];
        for (idx, p) in cells {
            if idx.len() != cards.len() || idx.iter().zip(&cards).any(|(i, c)| i >= c) {
                return Err(Error::dim(format!("cell {idx:?} outside {cards:?}")));
            }
            probs[idx.iter().zip(&strides).map(|(i, s)| i * s).sum::<usize>()] += p;
        }
        JointTable::new(names, cards, probs)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    fn positions(&self, vars: &[&str]) -> Result<Vec<usize>> {
        vars.iter()
            .map(|v| {
                self.names
                    .iter()
                    .position(|n| n == v)
                    .ok_or_else(|| Error::Schema(format!("unknown variable `{v}`")))
            })
            .collect()
    }

    /// Marginal over the listed variables (in that order).
    pub fn marginal(&self, vars: &[&str]) -> Result<JointTable> {
        let pos = self.positions(vars)?;
        let cards: Vec<usize> = pos.iter().map(|&i| self.cards[i]).collect();
        let probs = self.marginal_probs(&pos, &cards);
        Ok(JointTable {
            names: vars.iter().map(|s| s.to_string()).collect(),
            cards,
            probs,
        })
    }

    fn marginal_probs(&self, pos: &[usize], cards: &[usize]) -> Vec<f64> {
        let out_strides = strides(cards);
        let size: usize = cards.iter().product();
        let mut out = vec![0.0; size.max(1)];
        let mut idx = vec![0usize; self.cards.len()];
        for &p in &self.probs {
            if p != 0.0 {
                let flat: usize = pos.iter().zip(&out_strides).map(|(&i, s)| idx[i] * s).sum();
                out[flat] += p;
            }
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < self.cards[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        out
    }

    /// Joint entropy of a variable set, in bits; the empty set has entropy 0.
    pub fn entropy(&self, vars: &[&str]) -> Result<f64> {
        let pos = self.positions(vars)?;
        let cards: Vec<usize> = pos.iter().map(|&i| self.cards[i]).collect();
        Ok(entropy_bits(&self.marginal_probs(&pos, &cards)))
    }
}

/// `-Σ p log₂ p` with Neumaier-compensated summation.
pub(crate) fn entropy_bits(probs: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &p in probs.iter().filter(|&&p| p > 0.0) {
        let term = -p * p.log2();
        let t = sum + term;
        comp += if sum.abs() >= term.abs() { (sum - t) + term } else { (term - t) + sum };
        sum = t;
    }
    sum + comp
}

fn table_size(cards: &[usize]) -> Result<usize> {
    let mut size = 1usize;
    for &c in cards {
        if c == 0 {
            return Err(Error::Schema("zero cardinality".into()));
        }
        size = size
            .checked_mul(c)
            .filter(|&s| s <= MAX_CELLS)
            .ok_or_else(|| Error::Size(format!("table over {cards:?} exceeds {MAX_CELLS} cells")))?;
    }
    Ok(size)
}

fn strides(cards: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; cards.len()];
    for i in (0..cards.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * cards[i + 1];
    }
    s
}
