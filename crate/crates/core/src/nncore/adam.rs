use std::collections::BTreeMap;

use super::{Grads, Matrix, ParamStore};
use crate::error::{Error, Result};

/// Adam moments and hyperparameters for one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Matrix>,
    v: BTreeMap<String, Matrix>,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: BTreeMap<String, Matrix> = params
            .iter()
            .map(|(k, p)| (k.to_string(), Matrix::zeros(p.rows(), p.cols())))
            .collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of every parameter.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads.iter() {
            let (Some(m), Some(v)) = (self.m.get_mut(name), self.v.get_mut(name)) else {
                return Err(Error::config(format!("no optimizer state for `{name}`")));
            };
            if m.shape() != g.shape() {
                return Err(Error::dim(format!("gradient for `{name}` has shape {:?}", g.shape())));
            }
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))?;
            for (((pi, mi), vi), &gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Matrix::filled(1, 1, v)).unwrap();
        p
    }

    fn grad(p: &ParamStore, g: f64) -> Grads {
        let mut gr = p.zeros_like();
        gr.0.insert("w".into(), Matrix::filled(1, 1, g));
        gr
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one_param(1.5);
        let mut s = AdamState::new(&p, 0.1);
        let g = grad(&p, 0.0);
        s.step(&mut p, &g).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.5]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_is_full_lr() {
        let mut p = one_param(0.0);
        let mut s = AdamState::new(&p, 0.1);
        let g = grad(&p, 1.0);
        s.step(&mut p, &g).unwrap();
        let w1 = p.get("w").unwrap().data()[0];
        assert!((w1 + 0.1).abs() < 1e-6);
        s.step(&mut p, &g).unwrap();
        assert!(p.get("w").unwrap().data()[0] < w1);
    }
}
