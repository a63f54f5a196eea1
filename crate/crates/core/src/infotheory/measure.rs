use std::cell::RefCell;
use std::collections::HashMap;

use super::table::{entropy_bits, JointTable};
use crate::error::{Error, Result};
use crate::synthworld::Enumeration;

/// Values in `[-MI_FLOOR, 0)` are rounding noise and clamp to zero.
pub const MI_FLOOR: f64 = 1e-12;

/// Anything that can report joint entropies (in bits) of named variable sets.
pub trait InfoMeasure {
    fn entropy(&self, vars: &[&str]) -> Result<f64>;

    /// `H(Y | Z) = H(Y, Z) - H(Z)`.
    fn cond_entropy(&self, y: &[&str], z: &[&str]) -> Result<f64> {
        disjoint(&[y, z])?;
        let h = self.entropy(&concat(&[y, z]))? - self.entropy(z)?;
        floor(h)
    }

    fn mutual_info(&self, x: &[&str], y: &[&str]) -> Result<f64> {
        self.cond_mutual_info(x, y, &[])
    }

    /// `I(X; Y | Z) = H(X, Z) + H(Y, Z) - H(X, Y, Z) - H(Z)`.
    fn cond_mutual_info(&self, x: &[&str], y: &[&str], z: &[&str]) -> Result<f64> {
        disjoint(&[x, y, z])?;
        let i = self.entropy(&concat(&[x, z]))? + self.entropy(&concat(&[y, z]))?
            - self.entropy(&concat(&[x, y, z]))?
            - self.entropy(z)?;
        floor(i)
    }
}

pub fn cond_entropy(t: &impl InfoMeasure, y: &[&str], z: &[&str]) -> Result<f64> {
    t.cond_entropy(y, z)
}

pub fn cond_mutual_info(t: &impl InfoMeasure, x: &[&str], y: &[&str], z: &[&str]) -> Result<f64> {
    t.cond_mutual_info(x, y, z)
}

fn floor(v: f64) -> Result<f64> {
    if v < -MI_FLOOR {
        return Err(Error::Numeric(format!("information quantity {v:e} below the numerical floor")));
    }
    Ok(v.max(0.0))
}

fn concat<'a>(parts: &[&[&'a str]]) -> Vec<&'a str> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

fn disjoint(sets: &[&[&str]]) -> Result<()> {
    let all = concat(sets);
    for (i, v) in all.iter().enumerate() {
        if all[..i].contains(v) {
            return Err(Error::Schema(format!("variable `{v}` appears in more than one argument set")));
        }
    }
    Ok(())
}

impl InfoMeasure for JointTable {
    fn entropy(&self, vars: &[&str]) -> Result<f64> {
        JointTable::entropy(self, vars)
    }
}

impl InfoMeasure for Enumeration {
    fn entropy(&self, vars: &[&str]) -> Result<f64> {
        let pos: Vec<usize> = vars
            .iter()
            .map(|v| {
                self.names
                    .iter()
                    .position(|n| n == v)
                    .ok_or_else(|| Error::Schema(format!("unknown variable `{v}`")))
            })
            .collect::<Result<_>>()?;
        let mut packed = Some(1u128);
        for &i in &pos {
            packed = packed.and_then(|s| s.checked_mul(self.cards[i] as u128));
        }
        let mut probs: Vec<f64> = if packed.is_some() {
            let mut groups: HashMap<u128, f64> = HashMap::new();
            for (ids, &p) in &self.cells {
                let k = pos.iter().fold(0u128, |acc, &i| acc * self.cards[i] as u128 + u128::from(ids[i]));
                *groups.entry(k).or_insert(0.0) += p;
            }
            let mut g: Vec<(u128, f64)> = groups.into_iter().collect();
            g.sort_unstable_by_key(|e| e.0);
            g.into_iter().map(|e| e.1).collect()
        } else {
            let mut groups: HashMap<Vec<u32>, f64> = HashMap::new();
            for (ids, &p) in &self.cells {
                *groups.entry(pos.iter().map(|&i| ids[i]).collect()).or_insert(0.0) += p;
            }
            let mut g: Vec<(Vec<u32>, f64)> = groups.into_iter().collect();
            g.sort_unstable_by(|a, b| a.0.cmp(&b.0));
            g.into_iter().map(|e| e.1).collect()
        };
        if pos.is_empty() {
            probs = vec![1.0];
        }
        Ok(entropy_bits(&probs))
    }
}

/// Memoizes entropies by variable set, so every identity sees the same rounding.
pub struct Cached<T> {
    inner: T,
    cache: RefCell<HashMap<Vec<String>, f64>>,
}

impl<T: InfoMeasure> Cached<T> {
    pub fn new(inner: T) -> Self {
        Cached { inner, cache: RefCell::new(HashMap::new()) }
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }
}

impl<T: InfoMeasure> InfoMeasure for Cached<T> {
    fn entropy(&self, vars: &[&str]) -> Result<f64> {
        let mut key: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
        key.sort();
        if let Some(&h) = self.cache.borrow().get(&key) {
            return Ok(h);
        }
        let sorted: Vec<&str> = key.iter().map(String::as_str).collect();
        let h = self.inner.entropy(&sorted)?;
        self.cache.borrow_mut().insert(key, h);
        Ok(h)
    }
}
