//! Matryoshka autoencoder over frozen FM embeddings: a tanh-bounded code whose every
//! configured prefix has its own decoder.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Checkpoint;
use crate::nncore::{stream_rng, AdamState, Grads, Matrix, ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatryoshkaAe {
    pub input_dim: usize,
    /// Sorted ascending, unique; the last entry is `d_max`.
    pub dims: Vec<usize>,
    /// Single linear encoder/decoder layers without tanh (diagnostics only).
    pub linear: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        AeTrainConfig {
            epochs: 30,
            batch: 64,
            lr: 3e-3,
            seed: 0,
        }
    }
}

/// Full-data `ℒ_MAE` before training (index 0) and after each epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct AeTrace {
    pub epoch_losses: Vec<f64>,
}

impl MatryoshkaAe {
    pub fn new(input_dim: usize, dims: &[usize], linear: bool) -> Result<Self> {
        let mut dims = dims.to_vec();
        dims.sort_unstable();
        dims.dedup();
        if input_dim == 0 || dims.is_empty() || dims[0] == 0 {
            return Err(Error::config("autoencoder needs D ≥ 1 and a nonempty set of positive prefix dims"));
        }
        Ok(MatryoshkaAe {
            input_dim,
            dims,
            linear,
        })
    }

    pub fn d_max(&self) -> usize {
        *self.dims.last().expect("nonempty")
    }

    fn hidden(&self) -> usize {
        2 * self.d_max()
    }

    /// Glorot weights and zero biases; linear mode starts from the identity where shapes allow.
    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let mut s = ParamStore::new();
        let (dx, h) = (self.input_dim, self.hidden());
        if self.linear {
            s.insert("ae.enc.w0", rect_identity(dx, self.d_max()))?;
            s.insert_zeros("ae.enc.b0", 1, self.d_max())?;
            for &d in &self.dims {
                s.insert(format!("ae.dec{d}.w0"), rect_identity(d, dx))?;
                s.insert_zeros(&format!("ae.dec{d}.b0"), 1, dx)?;
            }
            return Ok(s);
        }
        s.insert_glorot("ae.enc.w0", dx, h, seed)?;
        s.insert_zeros("ae.enc.b0", 1, h)?;
        s.insert_glorot("ae.enc.w1", h, self.d_max(), seed)?;
        s.insert_zeros("ae.enc.b1", 1, self.d_max())?;
        for &d in &self.dims {
            s.insert_glorot(&format!("ae.dec{d}.w0"), d, h, seed)?;
            s.insert_zeros(&format!("ae.dec{d}.b0"), 1, h)?;
            s.insert_glorot(&format!("ae.dec{d}.w1"), h, dx, seed)?;
            s.insert_zeros(&format!("ae.dec{d}.b1"), 1, dx)?;
        }
        Ok(s)
    }

    fn layer(tape: &mut Tape, store: &ParamStore, x: Var, w: &str, b: &str) -> Result<Var> {
        let w = tape.param(store, w)?;
        let b = tape.param(store, b)?;
        tape.affine(x, w, b)
    }

    fn record_encode(&self, tape: &mut Tape, store: &ParamStore, e: Var) -> Result<Var> {
        let a = Self::layer(tape, store, e, "ae.enc.w0", "ae.enc.b0")?;
        if self.linear {
            return Ok(a);
        }
        let h = tape.relu(a);
        let z = Self::layer(tape, store, h, "ae.enc.w1", "ae.enc.b1")?;
        Ok(tape.tanh(z))
    }

    fn record_decode(&self, tape: &mut Tape, store: &ParamStore, z: Var, d: usize) -> Result<Var> {
        let a = Self::layer(tape, store, z, &format!("ae.dec{d}.w0"), &format!("ae.dec{d}.b0"))?;
        if self.linear {
            return Ok(a);
        }
        let h = tape.relu(a);
        Self::layer(tape, store, h, &format!("ae.dec{d}.w1"), &format!("ae.dec{d}.b1"))
    }

    fn check_input(&self, e: &Matrix) -> Result<()> {
        if e.cols() != self.input_dim {
            return Err(Error::dim(format!("embedding dim {}, autoencoder expects {}", e.cols(), self.input_dim)));
        }
        Ok(())
    }

    /// `Σ_{d'} mean_rows ‖e − dec_{d'}(z_{1:d'})‖²`, recorded on `tape`.
    pub fn record_loss(&self, tape: &mut Tape, store: &ParamStore, e: &Matrix) -> Result<Var> {
        self.check_input(e)?;
        let ev = tape.constant(e.clone());
        let z = self.record_encode(tape, store, ev)?;
        let mut total: Option<Var> = None;
        for &d in &self.dims {
            let zp = tape.slice_cols(z, 0, d)?;
            let rec = self.record_decode(tape, store, zp, d)?;
            let l = tape.mse(rec, e)?;
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l)?,
            });
        }
        Ok(total.expect("nonempty dims"))
    }

    pub fn loss_and_grads(&self, store: &ParamStore, e: &Matrix) -> Result<(f64, Grads)> {
        let mut tape = Tape::new();
        let l = self.record_loss(&mut tape, store, e)?;
        Ok((tape.scalar(l), tape.backward(l, store)?))
    }

    /// Codes `z`, one row per embedding.
    pub fn encode(&self, store: &ParamStore, e: &Matrix) -> Result<Matrix> {
        self.check_input(e)?;
        let mut tape = Tape::new();
        let ev = tape.constant(e.clone());
        let z = self.record_encode(&mut tape, store, ev)?;
        Ok(tape.value(z).clone())
    }

    pub fn encode_one(&self, store: &ParamStore, e: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encode(store, &Matrix::row_vector(e))?.row(0).to_vec())
    }

    /// Reconstruction from the first `d` code coordinates with that prefix's decoder.
    pub fn decode_prefix(&self, store: &ParamStore, z_prefix: &Matrix, d: usize) -> Result<Matrix> {
        if !self.dims.contains(&d) {
            return Err(Error::config(format!("prefix dim {d} not in {:?}", self.dims)));
        }
        if z_prefix.cols() != d {
            return Err(Error::dim(format!("prefix has {} coords, expected {d}", z_prefix.cols())));
        }
        let mut tape = Tape::new();
        let z = tape.constant(z_prefix.clone());
        let out = self.record_decode(&mut tape, store, z, d)?;
        Ok(tape.value(out).clone())
    }

    /// Per-coordinate reconstruction MSE of every prefix, in `dims` order.
    pub fn prefix_mse(&self, store: &ParamStore, e: &Matrix) -> Result<Vec<(usize, f64)>> {
        let z = self.encode(store, e)?;
        self.dims
            .iter()
            .map(|&d| {
                let zp = prefix_cols(&z, d);
                let rec = self.decode_prefix(store, &zp, d)?;
                let sse: f64 = rec.data().iter().zip(e.data()).map(|(a, b)| (a - b) * (a - b)).sum();
                Ok((d, sse / e.data().len() as f64))
            })
            .collect()
    }

    /// Adam on `ℒ_MAE` over a frozen embedding set.
    pub fn train(&self, embeddings: &Matrix, hp: &AeTrainConfig) -> Result<(ParamStore, AeTrace)> {
        if embeddings.rows() == 0 {
            return Err(Error::Data("autoencoder training set is empty".into()));
        }
        self.check_input(embeddings)?;
        if hp.batch == 0 || !(hp.lr > 0.0) {
            return Err(Error::config("batch must be ≥ 1 and lr > 0"));
        }
        let mut store = self.init(hp.seed)?;
        let mut adam = AdamState::new(&store, hp.lr);
        let full = |s: &ParamStore| -> Result<f64> {
            let mut t = Tape::new();
            let l = self.record_loss(&mut t, s, embeddings)?;
            Ok(t.scalar(l))
        };
        let mut losses = vec![full(&store)?];
        let mut order: Vec<usize> = (0..embeddings.rows()).collect();
        let mut rng = stream_rng(hp.seed, "ae-shuffle");
        for _ in 0..hp.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(hp.batch) {
                let rows: Vec<Vec<f64>> = chunk.iter().map(|&r| embeddings.row(r).to_vec()).collect();
                let (_, g) = self.loss_and_grads(&store, &Matrix::from_rows(&rows)?)?;
                adam.step(&mut store, &g)?;
            }
            losses.push(full(&store)?);
        }
        Ok((store, AeTrace { epoch_losses: losses }))
    }

    pub fn checkpoint(&self, params: &ParamStore) -> Checkpoint {
        Checkpoint {
            schema_hash: [0; 32],
            meta: serde_json::json!({"kind": "ae", "ae": self}),
            params: params.clone(),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<(MatryoshkaAe, ParamStore)> {
        let ae: MatryoshkaAe = c.meta_field("ae")?;
        let ae = MatryoshkaAe::new(ae.input_dim, &ae.dims, ae.linear)?;
        Ok((ae, c.params.clone()))
    }
}

fn rect_identity(rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows.min(cols) {
        m.set(i, i, 1.0);
    }
    m
}

/// First `d` columns of every row.
pub fn prefix_cols(z: &Matrix, d: usize) -> Matrix {
    let mut out = Matrix::zeros(z.rows(), d);
    for r in 0..z.rows() {
        out.row_mut(r).copy_from_slice(&z.row(r)[..d]);
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Per-dimension correlations of codes with the soft label and with the true label.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationProbe {
    pub with_soft_label: Vec<f64>,
    pub with_label: Vec<f64>,
    /// Pearson correlation between the two per-dimension vectors.
    pub rho: f64,
}

pub fn correlation_probe(z: &Matrix, soft: &[f64], labels: &[u8]) -> Result<CorrelationProbe> {
    if z.rows() != soft.len() || z.rows() != labels.len() || z.rows() < 2 {
        return Err(Error::dim("probe needs ≥ 2 rows and one soft label and label per row"));
    }
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let cols: Vec<Vec<f64>> = (0..z.cols()).map(|c| (0..z.rows()).map(|r| z.get(r, c)).collect()).collect();
    let with_soft_label: Vec<f64> = cols.iter().map(|c| pearson(c, soft)).collect();
    let with_label: Vec<f64> = cols.iter().map(|c| pearson(c, &y)).collect();
    let rho = pearson(&with_soft_label, &with_label);
    Ok(CorrelationProbe {
        with_soft_label,
        with_label,
        rho,
    })
}
