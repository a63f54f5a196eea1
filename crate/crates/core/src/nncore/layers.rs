use super::{Activation, ParamStore, Tape, Var};
use crate::error::Result;

/// Stack of affine layers named `{prefix}.w{i}` / `{prefix}.b{i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub prefix: String,
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub last: Activation,
}

impl Mlp {
    /// `widths[0]` is the input width; each following entry is one layer.
    pub fn new(prefix: &str, widths: &[usize], hidden: Activation, last: Activation) -> Self {
        Mlp {
            prefix: prefix.to_string(),
            widths: widths.to_vec(),
            hidden,
            last,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }

    pub fn out_width(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }

    pub fn w_name(&self, i: usize) -> String {
        format!("{}.w{i}", self.prefix)
    }

    pub fn b_name(&self, i: usize) -> String {
        format!("{}.b{i}", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        for i in 0..self.n_layers() {
            store.insert_glorot(&self.w_name(i), self.widths[i], self.widths[i + 1], seed)?;
            store.insert_zeros(&self.b_name(i), 1, self.widths[i + 1])?;
        }
        Ok(())
    }

    /// Returns the post-activation output of every layer.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Vec<Var>> {
        let mut outs = Vec::with_capacity(self.n_layers());
        let mut h = x;
        for i in 0..self.n_layers() {
            let w = tape.param(store, &self.w_name(i))?;
            let b = tape.param(store, &self.b_name(i))?;
            let a = tape.affine(h, w, b)?;
            let kind = if i + 1 == self.n_layers() { self.last } else { self.hidden };
            h = tape.activation(kind, a);
            outs.push(h);
        }
        Ok(outs)
    }
}
