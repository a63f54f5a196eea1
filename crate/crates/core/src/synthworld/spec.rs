use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::{sigmoid, stream_rng};

/// Which model may read a feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Owner {
    VmVisible,
    FmExtra,
}

/// User-side features are drawn once per user; item and context features per event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    User,
    Item,
    Context,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub owner: Owner,
    pub side: Side,
    /// Value distribution; its length is the cardinality.
    pub probs: Vec<f64>,
    /// Additive logit contribution of each value.
    pub weights: Vec<f64>,
}

impl FeatureSpec {
    pub fn cardinality(&self) -> usize {
        self.probs.len()
    }

    pub fn per_user(&self) -> bool {
        self.side == Side::User
    }
}

/// Generative law of a discrete recommendation world.
///
/// `logit(p*) = bias + Σ_f w_f[x_f] + beta_temp · min(cap, positives among the last window events)`,
/// and `p = eps_y + (1 - 2 eps_y) · sigmoid(logit)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub n_users: usize,
    pub events_per_user: usize,
    pub features: Vec<FeatureSpec>,
    pub bias: f64,
    pub beta_temp: f64,
    pub window: usize,
    pub cap: usize,
    pub label_noise: f64,
    pub seed: u64,
}

/// Options for [`WorldSpec::random`].
#[derive(Clone, Debug)]
pub struct RandomWorld {
    /// `(cardinality, side)` of each VM-visible feature.
    pub vm: Vec<(usize, Side)>,
    /// `(cardinality, side)` of each extra feature.
    pub extras: Vec<(usize, Side)>,
    pub weight_scale: f64,
    pub extra_scale: f64,
    pub beta_temp: f64,
    pub window: usize,
    pub cap: usize,
    pub bias: f64,
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let mut names = std::collections::BTreeSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return Err(Error::config(format!("duplicate feature `{}`", f.name)));
            }
            if f.cardinality() < 2 || f.weights.len() != f.cardinality() {
                return Err(Error::config(format!("feature `{}` needs ≥2 values and one weight each", f.name)));
            }
            let total: f64 = f.probs.iter().sum();
            if f.probs.iter().any(|&p| !(p > 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::config(format!("feature `{}` probabilities invalid", f.name)));
            }
            if f.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::config(format!("feature `{}` has non-finite weights", f.name)));
            }
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::config("label_noise must be in [0, 0.5)"));
        }
        if self.window == 0 && self.beta_temp != 0.0 {
            return Err(Error::config("temporal channel needs window ≥ 1"));
        }
        if !self.bias.is_finite() || !self.beta_temp.is_finite() {
            return Err(Error::config("bias and beta_temp must be finite"));
        }
        Ok(())
    }

    pub fn vm_features(&self) -> impl Iterator<Item = &FeatureSpec> {
        self.features.iter().filter(|f| f.owner == Owner::VmVisible)
    }

    pub fn extra_features(&self) -> impl Iterator<Item = &FeatureSpec> {
        self.features.iter().filter(|f| f.owner == Owner::FmExtra)
    }

    pub fn n_vm(&self) -> usize {
        self.vm_features().count()
    }

    pub fn n_extra(&self) -> usize {
        self.extra_features().count()
    }

    /// Capped count of positives among the last `window` labels of `history` (oldest first).
    pub fn temporal_count(&self, history: &[u8]) -> usize {
        let start = history.len().saturating_sub(self.window);
        history[start..].iter().filter(|&&y| y == 1).count().min(self.cap)
    }

    /// Positive-label probability given feature values (vm block then extra block) and the count.
    pub fn p_true(&self, vm: &[u32], extra: &[u32], count: usize) -> f64 {
        let mut logit = self.bias + self.beta_temp * count as f64;
        let (mut iv, mut ie) = (0, 0);
        for f in &self.features {
            let v = match f.owner {
                Owner::VmVisible => {
                    iv += 1;
                    vm[iv - 1]
                }
                Owner::FmExtra => {
                    ie += 1;
                    extra[ie - 1]
                }
            };
            logit += f.weights[v as usize];
        }
        self.label_noise + (1.0 - 2.0 * self.label_noise) * sigmoid(logit)
    }

    /// Seeded world with normally distributed weights and uniform value distributions.
    pub fn random(opts: &RandomWorld, n_users: usize, events_per_user: usize, seed: u64) -> WorldSpec {
        let mut rng = stream_rng(seed, "world-weights");
        let mut features = Vec::new();
        let mut make = |name: String, card: usize, side: Side, owner: Owner, scale: f64| {
            let normal = Normal::new(0.0, scale.max(1e-300)).expect("valid scale");
            FeatureSpec {
                name,
                owner,
                side,
                probs: vec![1.0 / card as f64; card],
                weights: (0..card).map(|_| if scale == 0.0 { 0.0 } else { normal.sample(&mut rng) }).collect(),
            }
        };
        for (i, &(card, side)) in opts.vm.iter().enumerate() {
            features.push(make(format!("vm{i}"), card, side, Owner::VmVisible, opts.weight_scale));
        }
        for (i, &(card, side)) in opts.extras.iter().enumerate() {
            features.push(make(format!("extra{i}"), card, side, Owner::FmExtra, opts.extra_scale));
        }
        WorldSpec {
            n_users,
            events_per_user,
            features,
            bias: opts.bias,
            beta_temp: opts.beta_temp,
            window: opts.window,
            cap: opts.cap,
            label_noise: 0.0,
            seed,
        }
    }

    /// The streaming-experiment world: four VM-visible features, four extras, temporal channel on.
    pub fn default_experiment(seed: u64) -> WorldSpec {
        let mut rng = stream_rng(seed, "experiment-world");
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut feat = |name: &str, card: usize, side: Side, owner: Owner, scale: f64| FeatureSpec {
            name: name.to_string(),
            owner,
            side,
            probs: vec![1.0 / card as f64; card],
            weights: (0..card).map(|_| scale * normal.sample(&mut rng)).collect(),
        };
        let features = vec![
            feat("ad_id", 24, Side::Item, Owner::VmVisible, 0.6),
            feat("ad_cat", 4, Side::Item, Owner::VmVisible, 0.4),
            feat("hour", 4, Side::Context, Owner::VmVisible, 0.3),
            feat("device", 3, Side::User, Owner::VmVisible, 0.3),
            feat("segment", 4, Side::User, Owner::FmExtra, 1.0),
            feat("interest", 3, Side::User, Owner::FmExtra, 0.8),
            feat("placement", 3, Side::Context, Owner::FmExtra, 0.5),
            feat("cross_ctr", 4, Side::Item, Owner::FmExtra, 0.5),
        ];
        WorldSpec {
            n_users: 400,
            events_per_user: 120,
            features,
            bias: -1.0,
            beta_temp: 0.08,
            window: 60,
            cap: 40,
            label_noise: 0.0,
            seed,
        }
    }

    /// Small enumerable world used by the theory suite: temporal channel on, user-level extras.
    pub fn default_theory() -> WorldSpec {
        let opts = RandomWorld {
            vm: vec![(2, Side::Item), (2, Side::User)],
            extras: vec![(2, Side::User), (3, Side::User)],
            weight_scale: 0.8,
            extra_scale: 1.0,
            beta_temp: 0.9,
            window: 5,
            cap: 5,
            bias: -0.8,
        };
        WorldSpec::random(&opts, 1, 6, 20_240_601)
    }

    /// Draws a value from a feature's distribution.
    pub(crate) fn draw(f: &FeatureSpec, rng: &mut impl Rng) -> u32 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in f.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i as u32;
            }
        }
        (f.probs.len() - 1) as u32
    }
}
