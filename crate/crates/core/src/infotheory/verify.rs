use serde::Serialize;

use super::measure::{Cached, InfoMeasure};
use super::pipeline::TheoryPipeline;
use crate::error::Result;
use crate::synthworld::{Column, Enumeration, WorldSpec};

/// Slack allowed on every inequality check.
pub const INEQ_SLACK: f64 = 1e-9;

/// Three-way split of the information a stored sequence adds over current VM features.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct GainReport {
    pub i_loopfm: f64,
    pub i_temporal: f64,
    pub i_cross: f64,
    pub i_residual: f64,
    pub i_feature_raw: f64,
    /// `|I_LoopFM - (I_temporal + I_cross - I_residual)|`.
    pub identity_residual: f64,
}

impl GainReport {
    pub fn dpi_holds(&self) -> bool {
        self.i_cross <= self.i_feature_raw + INEQ_SLACK
    }
}

/// Stage-by-stage information losses along `E → Z → S`.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct PipelineReport {
    pub l_repr: f64,
    pub l_ae: f64,
    pub l_q: f64,
    pub l_repr_cross: f64,
    pub l_ae_cross: f64,
    pub l_q_cross: f64,
    pub i_temporal: f64,
    pub i_residual: f64,
    pub i_cross: f64,
    pub i_feature_raw: f64,
    /// `(l_repr + l_ae + l_q) / I_temporal`, 0 when the temporal channel is empty.
    pub tau: f64,
    /// `(cross losses) / I_feature_raw`, 0 when the raw cross channel is empty.
    pub eta: f64,
    /// `l_repr + l_ae + l_q - I_residual`; nonnegative when the bound holds.
    pub bound_slack: f64,
    /// `|I_feature_raw - I_cross - (cross losses)|`.
    pub cross_identity_residual: f64,
}

impl PipelineReport {
    pub fn temporal_loss(&self) -> f64 {
        self.l_repr + self.l_ae + self.l_q
    }

    pub fn cross_loss(&self) -> f64 {
        self.l_repr_cross + self.l_ae_cross + self.l_q_cross
    }

    pub fn bound_holds(&self) -> bool {
        self.bound_slack >= -INEQ_SLACK
    }

    pub fn losses_nonnegative(&self) -> bool {
        [self.l_repr, self.l_ae, self.l_q, self.l_repr_cross, self.l_ae_cross, self.l_q_cross]
            .iter()
            .all(|&l| l >= -INEQ_SLACK)
    }

    pub fn eta_in_range(&self) -> bool {
        (-INEQ_SLACK..=1.0 + INEQ_SLACK).contains(&self.eta)
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SandwichCheck {
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
    pub lower_slack: f64,
    pub upper_slack: f64,
    pub holds: bool,
}

/// Enumerated law of one world with one pipeline, at a fixed history depth.
pub struct PipelineTables {
    pub depth: usize,
    pub measure: Cached<Enumeration>,
}

impl PipelineTables {
    pub fn build(spec: &WorldSpec, depth: usize, pipe: &TheoryPipeline) -> Result<PipelineTables> {
        pipe.validate(spec)?;
        let mut cols = vec![Column::x_vm(), Column::history(), Column::label()];
        cols.extend(pipe.columns(""));
        Ok(PipelineTables {
            depth,
            measure: Cached::new(Enumeration::at_depth(spec, depth, &cols)?),
        })
    }
}

/// Gain and pipeline reports for the columns `E{tag}`, `Z{tag}`, `S{tag}`, `XF{tag}`.
pub(crate) fn measure_pipeline(m: &impl InfoMeasure, tag: &str) -> Result<(GainReport, PipelineReport)> {
    let (e, z, s, xf) = (format!("E{tag}"), format!("Z{tag}"), format!("S{tag}"), format!("XF{tag}"));
    let cmi = |a: &[&str], b: &[&str], c: &[&str]| m.cond_mutual_info(a, b, c);
    let x = ["x_vm"];
    let xh = ["x_vm", "H"];
    let i_loopfm = cmi(&[&s], &["y"], &x)?;
    let i_temporal = cmi(&["H"], &["y"], &x)?;
    let i_cross = cmi(&[&s], &["y"], &xh)?;
    let i_residual = cmi(&["H"], &["y"], &["x_vm", &s])?;
    let i_feature_raw = cmi(&[&xf], &["y"], &xh)?;
    let l_repr = cmi(&["H"], &["y"], &["x_vm", &e])?;
    let (he, hz, hs) = (cmi(&["H"], &[&e], &x)?, cmi(&["H"], &[&z], &x)?, cmi(&["H"], &[&s], &x)?);
    let (ey, zy) = (cmi(&[&e], &["y"], &xh)?, cmi(&[&z], &["y"], &xh)?);
    let (l_ae, l_q) = (he - hz, hz - hs);
    let (l_repr_cross, l_ae_cross, l_q_cross) = (i_feature_raw - ey, ey - zy, zy - i_cross);
    let temporal = l_repr + l_ae + l_q;
    let cross = l_repr_cross + l_ae_cross + l_q_cross;
    let ratio = |num: f64, den: f64| if den > super::MI_FLOOR { num / den } else { 0.0 };
    let gain = GainReport {
        i_loopfm,
        i_temporal,
        i_cross,
        i_residual,
        i_feature_raw,
        identity_residual: (i_loopfm - (i_temporal + i_cross - i_residual)).abs(),
    };
    let pipe = PipelineReport {
        l_repr,
        l_ae,
        l_q,
        l_repr_cross,
        l_ae_cross,
        l_q_cross,
        i_temporal,
        i_residual,
        i_cross,
        i_feature_raw,
        tau: ratio(temporal, i_temporal),
        eta: ratio(cross, i_feature_raw),
        bound_slack: temporal - i_residual,
        cross_identity_residual: (i_feature_raw - i_cross - cross).abs(),
    };
    Ok((gain, pipe))
}

pub fn verify_gain_decomposition(t: &PipelineTables) -> Result<GainReport> {
    Ok(measure_pipeline(&t.measure, "")?.0)
}

pub fn verify_pipeline(t: &PipelineTables) -> Result<PipelineReport> {
    Ok(measure_pipeline(&t.measure, "")?.1)
}

/// Checks `(1-τ)I_t + (1-η)I_fr ≤ I_LoopFM ≤ I_t + (1-η)I_fr` at [`INEQ_SLACK`].
pub fn verify_gain_sandwich(gain: &GainReport, pipe: &PipelineReport) -> SandwichCheck {
    sandwich_with(gain, pipe, pipe.tau)
}

/// Same as [`verify_gain_sandwich`] with a caller-chosen `τ`.
pub fn sandwich_with(gain: &GainReport, pipe: &PipelineReport, tau: f64) -> SandwichCheck {
    let raw = (1.0 - pipe.eta) * pipe.i_feature_raw;
    let lower = (1.0 - tau) * pipe.i_temporal + raw;
    let upper = pipe.i_temporal + raw;
    let lower_slack = gain.i_loopfm - lower;
    let upper_slack = upper - gain.i_loopfm;
    SandwichCheck {
        lower,
        value: gain.i_loopfm,
        upper,
        lower_slack,
        upper_slack,
        holds: lower_slack >= -INEQ_SLACK && upper_slack >= -INEQ_SLACK,
    }
}

/// Inequalities that hold for any world and deterministic pipeline.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct InequalityReport {
    pub failures: Vec<String>,
    pub checks: usize,
}

/// Data processing along `E → Z → S` and conditioning-reduces-entropy over nested sets.
pub fn verify_inequalities(t: &PipelineTables) -> Result<InequalityReport> {
    let m = &t.measure;
    let mut failures = vec![];
    let mut checks = 0;
    let mut leq = |name: &str, a: f64, b: f64| {
        checks += 1;
        if a > b + INEQ_SLACK {
            failures.push(format!("{name}: {a:.3e} > {b:.3e}"));
        }
    };
    for z in [&["x_vm"][..], &["x_vm", "H"][..], &[][..]] {
        let e = m.cond_mutual_info(&["E"], &["y"], z)?;
        let zz = m.cond_mutual_info(&["Z"], &["y"], z)?;
        let s = m.cond_mutual_info(&["S"], &["y"], z)?;
        leq(&format!("dpi I(Z;y|{z:?}) <= I(E;y|..)"), zz, e);
        leq(&format!("dpi I(S;y|{z:?}) <= I(Z;y|..)"), s, zz);
    }
    leq("dpi I(S;H|x) <= I(E;H|x)", m.cond_mutual_info(&["S"], &["H"], &["x_vm"])?, m.cond_mutual_info(&["E"], &["H"], &["x_vm"])?);
    let chains: [&[&str]; 5] = [&[], &["x_vm"], &["x_vm", "S"], &["x_vm", "S", "H"], &["x_vm", "S", "H", "XF"]];
    for w in chains.windows(2) {
        leq(&format!("H(y|{:?}) <= H(y|{:?})", w[1], w[0]), m.cond_entropy(&["y"], w[1])?, m.cond_entropy(&["y"], w[0])?);
    }
    leq("H(y|x,H) <= H(y|x)", m.cond_entropy(&["y"], &["x_vm", "H"])?, m.cond_entropy(&["y"], &["x_vm"])?);
    leq("H(y|x,E) <= H(y|x,Z)", m.cond_entropy(&["y"], &["x_vm", "E"])?, m.cond_entropy(&["y"], &["x_vm", "Z"])?);
    Ok(InequalityReport { failures, checks })
}

/// `I(S^(L); y | x_vm)` for `L = 0..=l_max`, with the pipeline truncated to the `L` most recent events.
pub fn verify_monotone_l(spec: &WorldSpec, pipe: &TheoryPipeline, l_max: usize) -> Result<MonotoneReport> {
    let mut pipes = Vec::with_capacity(l_max + 1);
    for l in 0..=l_max {
        pipes.push(TheoryPipeline { seq_len: Some(l), ..pipe.clone() });
    }
    let mut cols = vec![Column::x_vm(), Column::label()];
    for (l, p) in pipes.iter().enumerate() {
        let mut c = p.columns(&l.to_string());
        cols.push(c.swap_remove(2));
    }
    pipe.validate(spec)?;
    let m = Cached::new(Enumeration::at_depth(spec, l_max, &cols)?);
    let values = (0..=l_max)
        .map(|l| m.cond_mutual_info(&[&format!("S{l}")], &["y"], &["x_vm"]))
        .collect::<Result<Vec<_>>>()?;
    let ceiling = m.cond_entropy(&["y"], &["x_vm"])?;
    Ok(MonotoneReport { values, ceiling })
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct MonotoneReport {
    /// `values[L] = I(S^(L); y | x_vm)`.
    pub values: Vec<f64>,
    /// `H(y | x_vm)`.
    pub ceiling: f64,
}

impl MonotoneReport {
    pub fn non_decreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] >= w[0] - 1e-10)
    }

    pub fn bounded(&self) -> bool {
        self.values.iter().all(|&v| v <= self.ceiling + 1e-10)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infotheory::{AeMap, QuantMap};
    use crate::nncore::Matrix;
    use crate::synthworld::{RandomWorld, Side};

    fn world(beta: f64, extras: Vec<(usize, Side)>) -> WorldSpec {
        let opts = RandomWorld {
            vm: vec![(2, Side::Item), (3, Side::User)],
            extras,
            weight_scale: 0.8,
            extra_scale: 1.2,
            beta_temp: beta,
            window: 3,
            cap: 2,
            bias: -0.4,
        };
        WorldSpec::random(&opts, 1, 4, 11)
    }

    #[test]
    fn no_extras_and_lossless_collapses_to_temporal() {
        let spec = world(0.9, vec![]);
        let t = PipelineTables::build(&spec, 3, &TheoryPipeline::lossless(&spec, &[])).unwrap();
        let g = verify_gain_decomposition(&t).unwrap();
        assert!(g.i_temporal > 0.01);
        assert!(g.i_cross.abs() < 1e-12 && g.i_residual.abs() < 1e-12);
        assert!((g.i_loopfm - g.i_temporal).abs() < 1e-12);
        assert!(g.identity_residual < 1e-10);
    }

    #[test]
    fn identity_pipeline_loses_nothing() {
        let spec = world(0.7, vec![(2, Side::User), (3, Side::Context)]);
        let t = PipelineTables::build(&spec, 2, &TheoryPipeline::lossless(&spec, &[0, 1])).unwrap();
        let p = verify_pipeline(&t).unwrap();
        for l in [p.l_repr, p.l_ae, p.l_q, p.l_repr_cross, p.l_ae_cross, p.l_q_cross] {
            assert!(l.abs() < 1e-12, "{p:?}");
        }
        assert!(p.tau.abs() < 1e-9 && p.eta.abs() < 1e-9);
        assert!(p.i_feature_raw > 1e-4);
        let g = verify_gain_decomposition(&t).unwrap();
        let s = verify_gain_sandwich(&g, &p);
        assert!(s.holds && s.lower_slack.abs() < 1e-10 && s.upper_slack.abs() < 1e-10);
    }

    #[test]
    fn fewer_bits_lose_more_cross_information() {
        let spec = world(0.6, vec![(3, Side::User)]);
        let base = TheoryPipeline::lossless(&spec, &[0]);
        let d = base.embed_dim();
        let w: Vec<f64> = (0..d * 2).map(|i| 0.9 * ((i as f64) * 1.7).sin()).collect();
        let losses: Vec<f64> = [4, 3, 2]
            .iter()
            .map(|&bits| {
                let p = TheoryPipeline {
                    ae: AeMap::Tanh { weights: Matrix::from_vec(d, 2, w.clone()).unwrap() },
                    quant: QuantMap::Dyadic { bits },
                    ..base.clone()
                };
                let t = PipelineTables::build(&spec, 2, &p).unwrap();
                let r = verify_pipeline(&t).unwrap();
                assert!(r.cross_identity_residual < 1e-10);
                r.l_q_cross
            })
            .collect();
        assert!(losses.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{losses:?}");
    }

    #[test]
    fn inflated_tau_keeps_lower_bound() {
        let spec = world(0.8, vec![(2, Side::User)]);
        let p = TheoryPipeline { ae: AeMap::Grid { levels: 2 }, ..TheoryPipeline::lossless(&spec, &[0]) };
        let t = PipelineTables::build(&spec, 2, &p).unwrap();
        let (g, r) = (verify_gain_decomposition(&t).unwrap(), verify_pipeline(&t).unwrap());
        assert!(verify_gain_sandwich(&g, &r).holds);
        let s = sandwich_with(&g, &r, r.tau + 0.5);
        assert!(s.lower_slack >= -INEQ_SLACK);
        assert!(verify_inequalities(&t).unwrap().failures.is_empty());
    }

    #[test]
    fn monotone_in_sequence_length() {
        let spec = WorldSpec::default_theory();
        let m = verify_monotone_l(&spec, &TheoryPipeline::lossless(&spec, &[0, 1]), 5).unwrap();
        assert!(m.values[0].abs() < 1e-12);
        assert!(m.values.windows(2).all(|w| w[1] > w[0]), "{:?}", m.values);
        assert!(m.bounded());
        let gains: Vec<f64> = m.values.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gains[1..].iter().all(|&g| g < gains[0]));

        let flat = world(0.0, vec![]);
        let m = verify_monotone_l(&flat, &TheoryPipeline::lossless(&flat, &[]), 3).unwrap();
        assert!(m.values.iter().all(|v| v.abs() < 1e-12), "{:?}", m.values);
    }
}
