use super::{Grads, Matrix, ParamStore};
use crate::error::{Error, Result};

/// Probability clamp applied before every logarithm.
pub const PROB_EPS: f64 = 1e-7;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Contiguous row range `[start, start + len)` owned by one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(String),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    SumCols(Var),
    SegmentSoftmax(Var, Vec<Segment>),
    SegmentWeightedSum(Var, Var, Vec<Segment>),
    Bce(Var, Vec<f64>),
    Mse(Var, Matrix),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Records a forward computation so gradients can be pulled back through it.
///
/// Parameter leaves copy their values from a [`ParamStore`]; the store
/// version at recording time is remembered and checked by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    version: Option<u64>,
}

fn check_one_col(m: &Matrix, what: &str) -> Result<()> {
    if m.cols() != 1 {
        return Err(Error::dim(format!("{what} must be a column, got {:?}", m.shape())));
    }
    Ok(())
}

fn check_segments(segs: &[Segment], rows: usize) -> Result<()> {
    for s in segs {
        if s.start + s.len > rows {
            return Err(Error::dim(format!(
                "segment {}..{} exceeds {rows} rows",
                s.start,
                s.start + s.len
            )));
        }
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Constant)
    }

    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        match self.version {
            None => self.version = Some(store.version()),
            Some(v) if v != store.version() => {
                return Err(Error::StaleTape {
                    recorded: v,
                    current: store.version(),
                })
            }
            Some(_) => {}
        }
        let value = store.get(name)?.clone();
        Ok(self.push(value, Op::Param(name.to_string())))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// Adds a 1×c bias row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::dim(format!("bias {:?} for input {:?}", bv.shape(), xv.shape())));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, bb) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    /// `x · W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn activation(&mut self, kind: Activation, a: Var) -> Var {
        match kind {
            Activation::Relu => self.relu(a),
            Activation::Tanh => self.tanh(a),
            Activation::Sigmoid => self.sigmoid(a),
            Activation::Identity => a,
        }
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::dim("concat of nothing"))?;
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::dim("concat_cols with differing row counts"));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Row `i` of the output is row `idx[i]` of `a` (embedding lookup, row repetition).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= av.rows()) {
            return Err(Error::Schema(format!("row index {bad} out of range {}", av.rows())));
        }
        let mut out = Matrix::zeros(idx.len(), av.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(av.row(i));
        }
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(Error::dim(format!("slice {start}+{len} of {} cols", av.cols())));
        }
        let mut out = Matrix::zeros(av.rows(), len);
        for r in 0..av.rows() {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    /// Row sums, as an n×1 column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows()).map(|r| av.row(r).iter().sum()).collect();
        let out = Matrix::from_vec(av.rows(), 1, data).expect("finite row sums");
        self.push(out, Op::SumCols(a))
    }

    /// Softmax of an n×1 score column within each segment. Rows outside every segment get 0.
    pub fn segment_softmax(&mut self, scores: Var, segs: &[Segment]) -> Result<Var> {
        let sv = self.value(scores);
        check_one_col(sv, "scores")?;
        check_segments(segs, sv.rows())?;
        let mut out = Matrix::zeros(sv.rows(), 1);
        for s in segs {
            if s.len == 0 {
                continue;
            }
            let vals = &sv.data()[s.start..s.start + s.len];
            let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = vals.iter().map(|v| (v - mx).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (k, e) in exps.iter().enumerate() {
                out.data_mut()[s.start + k] = e / z;
            }
        }
        Ok(self.push(out, Op::SegmentSoftmax(scores, segs.to_vec())))
    }

    /// Output row `i` is `Σ_{r in segs[i]} w_r · values_r`; empty segments give zero rows.
    pub fn segment_weighted_sum(&mut self, weights: Var, values: Var, segs: &[Segment]) -> Result<Var> {
        let (wv, vv) = (self.value(weights), self.value(values));
        check_one_col(wv, "weights")?;
        if wv.rows() != vv.rows() {
            return Err(Error::dim("weights and values row counts differ"));
        }
        check_segments(segs, vv.rows())?;
        let mut out = Matrix::zeros(segs.len(), vv.cols());
        for (i, s) in segs.iter().enumerate() {
            for r in s.start..s.start + s.len {
                let w = wv.data()[r];
                for (o, x) in out.row_mut(i).iter_mut().zip(vv.row(r)) {
                    *o += w * x;
                }
            }
        }
        Ok(self.push(out, Op::SegmentWeightedSum(weights, values, segs.to_vec())))
    }

    /// Mean clamped binary cross-entropy of an n×1 probability column against targets in `[0,1]`.
    pub fn bce(&mut self, p: Var, targets: &[f64]) -> Result<Var> {
        let pv = self.value(p);
        check_one_col(pv, "probabilities")?;
        if pv.rows() != targets.len() || targets.is_empty() {
            return Err(Error::dim(format!("{} probabilities, {} targets", pv.rows(), targets.len())));
        }
        let n = targets.len() as f64;
        let total: f64 = pv.data().iter().zip(targets).map(|(&p, &t)| bce_loss(p, t)).sum();
        Ok(self.push(Matrix::filled(1, 1, total / n), Op::Bce(p, targets.to_vec())))
    }

    /// Mean over rows of the squared error row sum.
    pub fn mse(&mut self, pred: Var, target: &Matrix) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() || pv.rows() == 0 {
            return Err(Error::dim(format!("mse of {:?} vs {:?}", pv.shape(), target.shape())));
        }
        let sse: f64 = pv.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let out = Matrix::filled(1, 1, sse / pv.rows() as f64);
        Ok(self.push(out, Op::Mse(pred, target.clone())))
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Grads> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::dim(format!("loss must be 1x1, got {:?}", lv.shape())));
        }
        self.backward_with_seed(loss, &Matrix::filled(1, 1, 1.0), store)
    }

    /// Pulls back an arbitrary seed gradient `d loss / d output`.
    pub fn backward_with_seed(&self, out: Var, seed: &Matrix, store: &ParamStore) -> Result<Grads> {
        if let Some(v) = self.version {
            if v != store.version() {
                return Err(Error::StaleTape {
                    recorded: v,
                    current: store.version(),
                });
            }
        }
        if seed.shape() != self.value(out).shape() {
            return Err(Error::dim("seed gradient shape differs from output"));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed.clone());
        let mut result = store.zeros_like();

        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, d: Matrix| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(name) => {
                    if let Some(m) = result.0.get_mut(name) {
                        m.add_assign(&g);
                    }
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b))?;
                    let db = self.value(*a).t_matmul(&g)?;
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::AddBias(x, b) => {
                    acc(*b, g.sum_rows());
                    acc(*x, g);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.map(|v| -v));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |x, y| x * y)?;
                    let db = g.zip_map(self.value(*a), |x, y| x * y)?;
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::Scale(a, k) => acc(*a, g.map(|v| v * k)),
                Op::Relu(a) => {
                    let d = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                    acc(*a, d);
                }
                Op::Tanh(a) => {
                    let d = g.zip_map(&node.value, |gv, t| gv * (1.0 - t * t))?;
                    acc(*a, d);
                }
                Op::Sigmoid(a) => {
                    let d = g.zip_map(&node.value, |gv, s| gv * s * (1.0 - s))?;
                    acc(*a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        let mut d = Matrix::zeros(g.rows(), c);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + c]);
                        }
                        off += c;
                        acc(p, d);
                    }
                }
                Op::GatherRows(a, idx) => {
                    let av = self.value(*a);
                    let mut d = Matrix::zeros(av.rows(), av.cols());
                    for (r, &src) in idx.iter().enumerate() {
                        for (o, gv) in d.row_mut(src).iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                    acc(*a, d);
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(*a);
                    let mut d = Matrix::zeros(av.rows(), av.cols());
                    for r in 0..g.rows() {
                        d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(*a, d);
                }
                Op::SumCols(a) => {
                    let av = self.value(*a);
                    let mut d = Matrix::zeros(av.rows(), av.cols());
                    for r in 0..av.rows() {
                        let gv = g.data()[r];
                        d.row_mut(r).iter_mut().for_each(|x| *x = gv);
                    }
                    acc(*a, d);
                }
                Op::SegmentSoftmax(a, segs) => {
                    let s = &node.value;
                    let mut d = Matrix::zeros(s.rows(), 1);
                    for seg in segs {
                        let range = seg.start..seg.start + seg.len;
                        let dot: f64 = range.clone().map(|r| g.data()[r] * s.data()[r]).sum();
                        for r in range {
                            d.data_mut()[r] = s.data()[r] * (g.data()[r] - dot);
                        }
                    }
                    acc(*a, d);
                }
                Op::SegmentWeightedSum(w, v, segs) => {
                    let (wv, vv) = (self.value(*w), self.value(*v));
                    let mut dw = Matrix::zeros(wv.rows(), 1);
                    let mut dv = Matrix::zeros(vv.rows(), vv.cols());
                    for (i, seg) in segs.iter().enumerate() {
                        let gi = g.row(i);
                        for r in seg.start..seg.start + seg.len {
                            dw.data_mut()[r] += gi.iter().zip(vv.row(r)).map(|(a, b)| a * b).sum::<f64>();
                            let wr = wv.data()[r];
                            for (o, gg) in dv.row_mut(r).iter_mut().zip(gi) {
                                *o += wr * gg;
                            }
                        }
                    }
                    acc(*w, dw);
                    acc(*v, dv);
                }
                Op::Bce(p, targets) => {
                    let pv = self.value(*p);
                    let n = targets.len() as f64;
                    let g0 = g.data()[0];
                    let data = pv
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&p, &t)| {
                            if p < PROB_EPS || p > 1.0 - PROB_EPS {
                                0.0
                            } else {
                                g0 * (p - t) / (p * (1.0 - p)) / n
                            }
                        })
                        .collect();
                    acc(*p, Matrix::from_vec(pv.rows(), 1, data)?);
                }
                Op::Mse(p, target) => {
                    let pv = self.value(*p);
                    let k = 2.0 * g.data()[0] / pv.rows() as f64;
                    acc(*p, pv.zip_map(target, |a, b| k * (a - b))?);
                }
            }
        }
        Ok(result)
    }
}

/// Elementwise nonlinearity applied after an affine layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Applies an activation to every entry.
pub fn activation(kind: Activation, x: &Matrix) -> Matrix {
    match kind {
        Activation::Relu => x.map(|v| v.max(0.0)),
        Activation::Tanh => x.map(f64::tanh),
        Activation::Sigmoid => x.map(sigmoid),
        Activation::Identity => x.clone(),
    }
}

/// Clamped binary cross-entropy in nats; `y` may be a soft target in `[0,1]`.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}
