//! Verification worlds: a randomized battery, the feature-gap sweep and a negative-transfer construction.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::bound::{eval_tr_lower_bound, verify_tr_bound_population, TRBoundParams, TrPopulationReport};
use super::pipeline::{AeMap, Field, FieldMap, QuantMap, TheoryPipeline};
use super::verify::{
    verify_gain_decomposition, verify_gain_sandwich, verify_inequalities, verify_pipeline, GainReport,
    InequalityReport, PipelineReport, PipelineTables, SandwichCheck, INEQ_SLACK,
};
use crate::error::Result;
use crate::nncore::{stream_rng, Matrix};
use crate::quantization::Codec;
use crate::synthworld::{outcome_count, FeatureSpec, Owner, RandomWorld, Side, WorldSpec};

/// Largest outcome count a battery world may have.
pub const BATTERY_OUTCOMES: f64 = 2.5e5;

#[derive(Clone, Debug)]
pub struct BatteryWorld {
    pub spec: WorldSpec,
    pub depth: usize,
    pub pipeline: TheoryPipeline,
}

fn side(rng: &mut impl Rng, user_bias: f64) -> Side {
    let u: f64 = rng.random();
    if u < user_bias {
        Side::User
    } else if u < (1.0 + user_bias) / 2.0 {
        Side::Item
    } else {
        Side::Context
    }
}

fn random_field(rng: &mut impl Rng, field: Field, card: usize) -> FieldMap {
    if rng.random::<f64>() < 0.3 {
        let g = rng.random_range(1..=card as u32);
        FieldMap { field, groups: (0..card).map(|_| rng.random_range(0..g)).collect() }
    } else {
        FieldMap::exact(field, card)
    }
}

/// World `index` of the seeded battery with a random deterministic pipeline.
pub fn battery_world(seed: u64, index: usize) -> BatteryWorld {
    let mut rng = stream_rng(seed, &format!("battery/{index}"));
    loop {
        let n_vm = rng.random_range(1..=2);
        let n_extra = rng.random_range(1..=2);
        let opts = RandomWorld {
            vm: (0..n_vm).map(|_| (rng.random_range(2..=3), side(&mut rng, 0.3))).collect(),
            extras: (0..n_extra).map(|_| (rng.random_range(2..=3), side(&mut rng, 0.5))).collect(),
            weight_scale: 0.8,
            extra_scale: 1.0,
            beta_temp: rng.random_range(0.0..1.2),
            window: rng.random_range(1..=3),
            cap: rng.random_range(1..=3),
            bias: rng.random_range(-1.0..0.5),
        };
        let depth = rng.random_range(2..=3);
        let spec = WorldSpec::random(&opts, 1, depth + 1, rng.random());
        if outcome_count(&spec, depth) > BATTERY_OUTCOMES {
            continue;
        }
        let mut fields = vec![];
        for (i, &(card, _)) in opts.vm.iter().enumerate() {
            if rng.random::<f64>() < 0.8 {
                fields.push(random_field(&mut rng, Field::Vm(i), card));
            }
        }
        if rng.random::<f64>() < 0.85 {
            fields.push(FieldMap::exact(Field::Label, 2));
        }
        for (j, &(card, _)) in opts.extras.iter().enumerate() {
            if rng.random::<f64>() < 0.8 {
                fields.push(random_field(&mut rng, Field::Extra(j), card));
            }
        }
        if fields.is_empty() {
            fields.push(FieldMap::exact(Field::Label, 2));
        }
        let d = fields.len();
        let ae = match rng.random_range(0..20) {
            0..=5 => AeMap::Identity,
            6..=11 => AeMap::Grid { levels: rng.random_range(2..=5) },
            12..=18 => {
                let k = rng.random_range(1..=d);
                let w: Vec<f64> = (0..d * k).map(|_| StandardNormal.sample(&mut rng)).collect();
                AeMap::Tanh { weights: Matrix::from_vec(d, k, w).expect("shape") }
            }
            _ => AeMap::Constant,
        };
        let quant = match rng.random_range(0..6) {
            0 => QuantMap::Codec(Codec::Int4Uniform),
            1 => QuantMap::Codec(Codec::Int8Uniform),
            _ => QuantMap::Dyadic { bits: rng.random_range(1..=4) },
        };
        let seq_len = if rng.random::<f64>() < 0.3 { Some(rng.random_range(1..=depth)) } else { None };
        return BatteryWorld {
            spec,
            depth,
            pipeline: TheoryPipeline {
                fields,
                ae,
                quant,
                fm_extras: (0..n_extra).collect(),
                seq_len,
            },
        };
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BatteryEntry {
    pub index: usize,
    pub depth: usize,
    pub gain: GainReport,
    pub pipeline: PipelineReport,
    pub sandwich: SandwichCheck,
    pub inequalities: InequalityReport,
}

impl BatteryEntry {
    pub fn identities_pass(&self) -> bool {
        self.gain.identity_residual < 1e-10 && self.pipeline.cross_identity_residual < 1e-10
    }

    /// Every inequality failure, one line each.
    pub fn inequality_failures(&self) -> Vec<String> {
        let mut f = self.inequalities.failures.clone();
        if !self.pipeline.bound_holds() {
            f.push(format!("pipeline bound slack {:.3e}", self.pipeline.bound_slack));
        }
        if !self.pipeline.losses_nonnegative() {
            f.push("negative stage loss".into());
        }
        if !self.pipeline.eta_in_range() {
            f.push(format!("eta {} outside [0, 1]", self.pipeline.eta));
        }
        if !self.sandwich.holds {
            f.push(format!("sandwich slack {:.3e}/{:.3e}", self.sandwich.lower_slack, self.sandwich.upper_slack));
        }
        if !self.gain.dpi_holds() {
            f.push("I_cross exceeds I_feature_raw".into());
        }
        f
    }
}

pub fn check_battery_world(index: usize, w: &BatteryWorld) -> Result<BatteryEntry> {
    let t = PipelineTables::build(&w.spec, w.depth, &w.pipeline)?;
    let gain = verify_gain_decomposition(&t)?;
    let pipeline = verify_pipeline(&t)?;
    let sandwich = verify_gain_sandwich(&gain, &pipeline);
    let inequalities = verify_inequalities(&t)?;
    Ok(BatteryEntry { index, depth: w.depth, gain, pipeline, sandwich, inequalities })
}

pub fn run_battery(seed: u64, n_worlds: usize) -> Result<Vec<BatteryEntry>> {
    (0..n_worlds).map(|i| check_battery_world(i, &battery_world(seed, i))).collect()
}

/// Number of candidate new features in the sweep world.
pub const SWEEP_NEW: usize = 8;
pub const SWEEP_DEPTH: usize = 2;

fn feature(name: &str, owner: Owner, side: Side, weights: Vec<f64>) -> FeatureSpec {
    let n = weights.len();
    FeatureSpec { name: name.into(), owner, side, probs: vec![1.0 / n as f64; n], weights }
}

/// Two VM features, one extra known to both FM generations and eight user-level extras
/// available to the newer one.
pub fn sweep_world() -> WorldSpec {
    let mut features = vec![
        feature("ad", Owner::VmVisible, Side::Item, vec![-0.6, 0.6]),
        feature("device", Owner::VmVisible, Side::User, vec![0.3, -0.3]),
        feature("e0", Owner::FmExtra, Side::User, vec![-1.0, -0.3, 0.3, 1.0]),
    ];
    for j in 1..=SWEEP_NEW {
        let s = 0.35 + 0.05 * j as f64;
        features.push(feature(&format!("n{j}"), Owner::FmExtra, Side::User, vec![-s, s]));
    }
    WorldSpec {
        n_users: 1,
        events_per_user: SWEEP_DEPTH + 1,
        features,
        bias: -0.5,
        beta_temp: 0.8,
        window: 3,
        cap: 3,
        label_noise: 0.0,
        seed: 0,
    }
}

/// Older FM: sees `e0` only through a two-way merge of its four values.
pub fn sweep_fm1(spec: &WorldSpec) -> TheoryPipeline {
    let mut p = TheoryPipeline::lossless(spec, &[0]);
    for f in &mut p.fields {
        if f.field == Field::Extra(0) {
            f.groups = vec![0, 0, 1, 1];
        }
    }
    p
}

/// Newer FM with `delta` extra features, passed through without loss.
pub fn sweep_fm2(spec: &WorldSpec, delta: usize) -> TheoryPipeline {
    let extras: Vec<usize> = (0..=delta).collect();
    TheoryPipeline::lossless(spec, &extras)
}

/// A newer FM whose one-dimensional, one-bit bottleneck destroys most of what it sees.
pub fn a3_violating_fm2(spec: &WorldSpec, delta: usize) -> TheoryPipeline {
    let mut p = sweep_fm2(spec, delta);
    let d = p.embed_dim();
    let w: Vec<f64> = (0..d).map(|i| if i == 0 { 1.0 } else { 0.05 }).collect();
    p.ae = AeMap::Tanh { weights: Matrix::from_vec(d, 1, w).expect("shape") };
    p.quant = QuantMap::Dyadic { bits: 1 };
    p
}

#[derive(Clone, Debug, Serialize)]
pub struct DeltaSweepReport {
    pub deltas: Vec<usize>,
    pub instances: Vec<TrPopulationReport>,
    /// One constant set valid for every swept δ.
    pub params: TRBoundParams,
    pub tr_lb: Vec<f64>,
    pub tr_pop: Vec<f64>,
}

impl DeltaSweepReport {
    pub fn all_hold(&self) -> bool {
        self.instances.iter().all(|r| r.a3_holds)
            && self.tr_pop.iter().zip(&self.tr_lb).all(|(p, lb)| *p >= lb - INEQ_SLACK)
    }

    pub fn lb_non_decreasing(&self) -> bool {
        self.tr_lb.windows(2).all(|w| w[1] >= w[0] - 1e-12)
    }
}

/// Exact `TR_pop` per δ, with the bound constants instantiated once over all candidate features.
pub fn run_delta_sweep(deltas: &[usize]) -> Result<DeltaSweepReport> {
    let spec = sweep_world();
    let fm1 = sweep_fm1(&spec);
    let mut instances = Vec::with_capacity(deltas.len());
    for &d in deltas {
        instances.push(verify_tr_bound_population(&spec, SWEEP_DEPTH, &fm1, &sweep_fm2(&spec, d))?);
    }
    let full = match instances.iter().find(|r| r.delta == SWEEP_NEW) {
        Some(r) => r.clone(),
        None => verify_tr_bound_population(&spec, SWEEP_DEPTH, &fm1, &sweep_fm2(&spec, SWEEP_NEW))?,
    };
    let tau2 = instances.iter().map(|r| r.params.tau2).fold(0.0, f64::max);
    let params = TRBoundParams { tau2, ..full.params.clone() };
    let tr_lb = deltas
        .iter()
        .map(|&d| eval_tr_lower_bound(&params.with_delta(d as f64)))
        .collect::<Result<Vec<_>>>()?;
    let tr_pop = instances.iter().map(|r| r.tr_pop).collect();
    Ok(DeltaSweepReport { deltas: deltas.to_vec(), instances, params, tr_lb, tr_pop })
}

/// FM₁ as in the sweep; FM₂ adds every new feature but squeezes them through a one-bit code.
pub fn run_a3_violation() -> Result<TrPopulationReport> {
    let spec = sweep_world();
    verify_tr_bound_population(&spec, SWEEP_DEPTH, &sweep_fm1(&spec), &a3_violating_fm2(&spec, SWEEP_NEW))
}
