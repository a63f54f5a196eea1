use serde::{Deserialize, Serialize};

use super::measure::{Cached, InfoMeasure};
use super::pipeline::TheoryPipeline;
use super::verify::{measure_pipeline, GainReport, PipelineReport, INEQ_SLACK};
use crate::error::{Error, Result};
use crate::synthworld::{Column, Enumeration, WorldSpec};

/// Constants of the transfer-ratio lower bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TRBoundParams {
    pub tau2: f64,
    pub eta1: f64,
    pub kappa_gap_hist_lower: f64,
    pub kappa_gap_upper: f64,
    pub i_temporal: f64,
    pub kappa_over_upper: f64,
    pub kappa_over_lower: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub delta: f64,
}

impl TRBoundParams {
    /// `ξ = m/n + n/(p - m)` for `m` features, `p` parameters and `n` samples.
    pub fn xi(m: f64, p: f64, n: f64) -> Result<f64> {
        if !(p > m) || !(n > 0.0) {
            return Err(Error::Domain(format!("ξ needs p > m and n > 0 (m={m}, p={p}, n={n})")));
        }
        Ok(m / n + n / (p - m))
    }

    pub fn with_delta(&self, delta: f64) -> TRBoundParams {
        TRBoundParams { delta, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.tau2,
            self.eta1,
            self.kappa_gap_hist_lower,
            self.kappa_gap_upper,
            self.i_temporal,
            self.kappa_over_upper,
            self.kappa_over_lower,
            self.xi1,
            self.xi2,
            self.delta,
        ];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("bound constants must be finite and nonnegative".into()));
        }
        if self.kappa_over_lower > self.kappa_over_upper {
            return Err(Error::Domain("lower overparameterization constant exceeds the upper one".into()));
        }
        Ok(())
    }

    /// `(1 - η₁) κ̲_hist / κ̄_gap`, the large-δ limit.
    pub fn limit(&self) -> f64 {
        (1.0 - self.eta1) * self.kappa_gap_hist_lower / self.kappa_gap_upper
    }
}

/// `(-τ₂ I_t + (1-η₁) κ̲_hist δ) / (κ̄_gap δ + κ̄_over ξ₁ - κ̲_over ξ₂)`.
pub fn eval_tr_lower_bound(p: &TRBoundParams) -> Result<f64> {
    p.validate()?;
    let den = p.kappa_gap_upper * p.delta + p.kappa_over_upper * p.xi1 - p.kappa_over_lower * p.xi2;
    if !(den > 0.0) {
        return Err(Error::Domain(format!("bound denominator {den:e} is not positive")));
    }
    Ok((-p.tau2 * p.i_temporal + (1.0 - p.eta1) * p.kappa_gap_hist_lower * p.delta) / den)
}

/// Population-level comparison of two FM generations on one world.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct TrPopulationReport {
    pub delta: usize,
    /// `H(y|x,S₁) - H(y|x,S₂)`.
    pub delta_loopfm: f64,
    /// `H(y|x,extras₁) - H(y|x,extras₂)` on current-step features.
    pub delta_teacher: f64,
    pub tr_pop: f64,
    pub gain1: GainReport,
    pub gain2: GainReport,
    pub pipe1: PipelineReport,
    pub pipe2: PipelineReport,
    /// Per new feature `j`: `I(u_j; y | x, extras₁, u_<j)`.
    pub kappa_gap_terms: Vec<f64>,
    /// Per new feature `j`: `I(u_j hist; y | x, H, extras₁ hist, u_<j hist)`.
    pub kappa_hist_terms: Vec<f64>,
    pub a3_holds: bool,
    /// `τ₁ I_t + (1-η₂) I_fr,2 - (1-η₁) I_fr,1`; negative transfer is guaranteed when this is negative.
    pub negative_condition: f64,
    pub params: TRBoundParams,
    /// `None` when the bound's denominator is not positive.
    pub tr_lb: Option<f64>,
}

impl TrPopulationReport {
    /// `TR_pop ≥ TR_LB` (trivially true when A3 fails, since the bound does not apply).
    pub fn holds(&self) -> bool {
        !self.a3_holds || self.tr_lb.is_none_or(|lb| self.tr_pop >= lb - INEQ_SLACK)
    }

    /// Numerator lower bound `-τ₂ I_t + (1-η₁) Δ_fr`, before A2 is applied.
    pub fn numerator_bound(&self) -> f64 {
        -self.pipe2.tau * self.pipe2.i_temporal
            + (1.0 - self.pipe1.eta) * (self.pipe2.i_feature_raw - self.pipe1.i_feature_raw)
    }
}

fn min_or_zero(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Computes `TR_pop` exactly and instantiates the bound constants from per-feature chain terms.
///
/// FM₁'s extras must be a subset of FM₂'s. Overparameterization terms are zero.
pub fn verify_tr_bound_population(
    spec: &WorldSpec,
    depth: usize,
    fm1: &TheoryPipeline,
    fm2: &TheoryPipeline,
) -> Result<TrPopulationReport> {
    fm1.validate(spec)?;
    fm2.validate(spec)?;
    if let Some(j) = fm1.fm_extras.iter().find(|j| !fm2.fm_extras.contains(j)) {
        return Err(Error::config(format!("FM₁ extra {j} is missing from FM₂")));
    }
    let old: Vec<usize> = fm1.fm_extras.clone();
    let new: Vec<usize> = fm2.fm_extras.iter().copied().filter(|j| !old.contains(j)).collect();
    let all: Vec<usize> = fm2.fm_extras.clone();
    let singles: Vec<[usize; 1]> = new.iter().map(|&j| [j]).collect();
    let mut cols = vec![Column::x_vm(), Column::history(), Column::label()];
    let mut c1 = fm1.columns("1");
    let mut c2 = fm2.columns("2");
    cols.append(&mut c1);
    cols.append(&mut c2);
    cols.push(Column::extras("C1", &old));
    cols.push(Column::extras("C2", &all));
    for (k, s) in singles.iter().enumerate() {
        cols.push(Column::extras(&format!("u{k}"), s));
        cols.push(Column::extras_history(&format!("uh{k}"), s));
    }
    cols.push(Column::extras_history("XH1", &old));
    let m = Cached::new(Enumeration::at_depth(spec, depth, &cols)?);

    let (gain1, pipe1) = measure_pipeline(&m, "1")?;
    let (gain2, pipe2) = measure_pipeline(&m, "2")?;

    let h1 = m.cond_entropy(&["y"], &["x_vm", "C1"])?;
    let h2 = m.cond_entropy(&["y"], &["x_vm", "C2"])?;
    let delta_teacher = h1 - h2;
    if !(delta_teacher > 0.0) {
        return Err(Error::Domain(format!("teacher improvement {delta_teacher:e} is not positive")));
    }
    let delta_loopfm = m.cond_entropy(&["y"], &["x_vm", "S1"])? - m.cond_entropy(&["y"], &["x_vm", "S2"])?;

    let names: Vec<(String, String)> = (0..new.len()).map(|k| (format!("u{k}"), format!("uh{k}"))).collect();
    let mut kappa_gap_terms = Vec::with_capacity(new.len());
    let mut kappa_hist_terms = Vec::with_capacity(new.len());
    for k in 0..new.len() {
        let mut cur: Vec<&str> = vec!["x_vm", "C1"];
        let mut hist: Vec<&str> = vec!["x_vm", "H", "XH1"];
        for (u, uh) in &names[..k] {
            cur.push(u);
            hist.push(uh);
        }
        kappa_gap_terms.push(m.cond_mutual_info(&[&names[k].0], &["y"], &cur)?);
        kappa_hist_terms.push(m.cond_mutual_info(&[&names[k].1], &["y"], &hist)?);
    }
    let params = TRBoundParams {
        tau2: pipe2.tau,
        eta1: pipe1.eta,
        kappa_gap_hist_lower: min_or_zero(&kappa_hist_terms),
        kappa_gap_upper: kappa_gap_terms.iter().copied().fold(0.0, f64::max),
        i_temporal: pipe2.i_temporal,
        kappa_over_upper: 0.0,
        kappa_over_lower: 0.0,
        xi1: 0.0,
        xi2: 0.0,
        delta: new.len() as f64,
    };
    let tr_lb = eval_tr_lower_bound(&params).ok();
    Ok(TrPopulationReport {
        delta: new.len(),
        delta_loopfm,
        delta_teacher,
        tr_pop: delta_loopfm / delta_teacher,
        a3_holds: pipe2.cross_loss() <= pipe1.cross_loss() + INEQ_SLACK,
        negative_condition: pipe1.tau * pipe1.i_temporal + (1.0 - pipe2.eta) * pipe2.i_feature_raw
            - (1.0 - pipe1.eta) * pipe1.i_feature_raw,
        gain1,
        gain2,
        pipe1,
        pipe2,
        kappa_gap_terms,
        kappa_hist_terms,
        params,
        tr_lb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> TRBoundParams {
        TRBoundParams {
            tau2: 0.1,
            eta1: 0.3,
            kappa_gap_hist_lower: 0.02,
            kappa_gap_upper: 0.05,
            i_temporal: 0.2,
            kappa_over_upper: 0.0,
            kappa_over_lower: 0.0,
            xi1: 0.0,
            xi2: 0.0,
            delta: 1.0,
        }
    }

    #[test]
    fn no_temporal_loss_gives_constant_ratio() {
        let p = TRBoundParams { tau2: 0.0, ..params() };
        let want = 0.7 * 0.02 / 0.05;
        for d in [1.0, 3.0, 17.0, 64.0] {
            assert!((eval_tr_lower_bound(&p.with_delta(d)).unwrap() - want).abs() < 1e-15);
        }
    }

    #[test]
    fn approaches_limit_from_below_and_never_decreases() {
        let p = TRBoundParams { kappa_over_upper: 0.4, kappa_over_lower: 0.1, xi1: 0.05, xi2: 0.02, ..params() };
        let grid: Vec<f64> = (1..=64).map(|d| eval_tr_lower_bound(&p.with_delta(d as f64)).unwrap()).collect();
        assert!(grid.windows(2).all(|w| w[1] >= w[0]));
        let far = eval_tr_lower_bound(&p.with_delta(1e9)).unwrap();
        assert!(far < p.limit() && p.limit() - far < 1e-6);
        assert!(grid[63] < p.limit());
    }

    #[test]
    fn nonpositive_denominator_is_domain_error() {
        let p = TRBoundParams { kappa_over_upper: 0.1, kappa_over_lower: 0.1, xi2: 5.0, ..params() };
        assert!(matches!(eval_tr_lower_bound(&p), Err(Error::Domain(_))));
        assert!(matches!(eval_tr_lower_bound(&params().with_delta(0.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn xi_formula() {
        assert!((TRBoundParams::xi(10.0, 1010.0, 100.0).unwrap() - 0.2).abs() < 1e-15);
        assert!(TRBoundParams::xi(10.0, 5.0, 100.0).is_err());
    }
}
