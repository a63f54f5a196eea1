use serde::{Deserialize, Serialize};

use super::{Owner, WorldSpec};
use crate::error::Result;
use crate::nncore::stream_rng;
use rand::Rng;

pub const N_CHUNKS: u8 = 8;
pub const DAY_TICKS: i64 = 10_000;

/// One labeled interaction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSample {
    pub key: u64,
    pub timestamp: i64,
    /// 1-based temporal chunk.
    pub chunk: u8,
    pub vm: Vec<u32>,
    pub extra: Vec<u32>,
    pub label: u8,
    /// Generative probability; `NaN` when unknown (ingested logs).
    pub p_true: f64,
}

/// Column layout shared by every event of a log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogSchema {
    pub vm_names: Vec<String>,
    pub vm_cards: Vec<usize>,
    pub extra_names: Vec<String>,
    pub extra_cards: Vec<usize>,
}

impl LogSchema {
    pub fn of(spec: &WorldSpec) -> LogSchema {
        let (mut vm_names, mut vm_cards, mut extra_names, mut extra_cards) = (vec![], vec![], vec![], vec![]);
        for f in &spec.features {
            match f.owner {
                Owner::VmVisible => {
                    vm_names.push(f.name.clone());
                    vm_cards.push(f.cardinality());
                }
                Owner::FmExtra => {
                    extra_names.push(f.name.clone());
                    extra_cards.push(f.cardinality());
                }
            }
        }
        LogSchema {
            vm_names,
            vm_cards,
            extra_names,
            extra_cards,
        }
    }
}

/// Chronologically ordered events.
#[derive(Clone, Debug, PartialEq)]
pub struct EventLog {
    pub schema: LogSchema,
    pub events: Vec<EventSample>,
}

impl EventLog {
    pub fn chunk(&self, c: u8) -> impl Iterator<Item = &EventSample> {
        self.events.iter().filter(move |e| e.chunk == c)
    }

    pub fn chunks(&self, range: std::ops::RangeInclusive<u8>) -> impl Iterator<Item = &EventSample> {
        self.events.iter().filter(move |e| range.contains(&e.chunk))
    }
}

/// Samples the event log; each user draws from its own `(seed, user)` stream.
pub fn generate(spec: &WorldSpec, seed: u64) -> Result<EventLog> {
    spec.validate()?;
    let n = spec.events_per_user.max(1);
    let mut events = Vec::with_capacity(spec.n_users * n);
    for user in 0..spec.n_users {
        let mut rng = stream_rng(seed, &format!("user/{user}"));
        let user_vals: Vec<u32> = spec
            .features
            .iter()
            .map(|f| if f.per_user() { WorldSpec::draw(f, &mut rng) } else { 0 })
            .collect();
        let mut labels = Vec::with_capacity(n);
        let jitter = (user as i64 * 37) % 97;
        for i in 0..n {
            let (mut vm, mut extra) = (Vec::new(), Vec::new());
            for (fi, f) in spec.features.iter().enumerate() {
                let v = if f.per_user() { user_vals[fi] } else { WorldSpec::draw(f, &mut rng) };
                match f.owner {
                    Owner::VmVisible => vm.push(v),
                    Owner::FmExtra => extra.push(v),
                }
            }
            let p = spec.p_true(&vm, &extra, spec.temporal_count(&labels));
            let label = u8::from(rng.random::<f64>() < p);
            labels.push(label);
            let day = (i * N_CHUNKS as usize / n) as i64;
            let first = (day as usize * n).div_ceil(N_CHUNKS as usize);
            let per_day = ((day as usize + 1) * n).div_ceil(N_CHUNKS as usize) - first;
            let step = DAY_TICKS / (per_day as i64 + 1);
            let timestamp = day * DAY_TICKS + (i - first) as i64 * step + 1 + jitter % step.max(1);
            events.push(EventSample {
                key: user as u64,
                timestamp,
                chunk: day as u8 + 1,
                vm,
                extra,
                label,
                p_true: p,
            });
        }
    }
    events.sort_by_key(|e| (e.timestamp, e.key));
    Ok(EventLog {
        schema: LogSchema::of(spec),
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_ordered() {
        let mut spec = WorldSpec::default_experiment(3);
        spec.n_users = 20;
        spec.events_per_user = 40;
        let a = generate(&spec, 9).unwrap();
        let b = generate(&spec, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.events.len(), 800);
        assert!(a.events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        for c in 1..=N_CHUNKS {
            assert_eq!(a.chunk(c).count(), 100);
        }
        let mut last = vec![-1i64; 20];
        for e in &a.events {
            assert!(e.timestamp > last[e.key as usize]);
            last[e.key as usize] = e.timestamp;
            assert!(e.p_true > 0.0 && e.p_true < 1.0);
        }
    }
}
