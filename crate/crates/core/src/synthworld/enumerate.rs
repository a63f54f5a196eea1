//! Exact enumeration of a world's generative law for a fresh user.
//!
//! An outcome is one user's attribute draw, `depth` past events (features and
//! labels, oldest first) and the current event. Derived variables are computed
//! per outcome by [`Column`] functions and interned into dense ids.

use std::collections::{BTreeMap, HashMap};

use super::{Owner, WorldSpec};
use crate::error::{Error, Result};
use crate::infotheory::JointTable;

/// Default ceiling on enumerated outcomes.
pub const DEFAULT_BUDGET: usize = 4_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct EventVals {
    pub vm: Vec<u32>,
    pub extra: Vec<u32>,
    pub label: u8,
    /// `P(label = 1)` under the generative law.
    pub p: f64,
}

/// One enumerated trajectory.
#[derive(Debug)]
pub struct Outcome<'a> {
    pub past: &'a [EventVals],
    pub cur: &'a EventVals,
}

impl Outcome<'_> {
    pub fn history_labels(&self) -> Vec<u8> {
        self.past.iter().map(|e| e.label).collect()
    }
}

type KeyFn<'a> = Box<dyn Fn(&Outcome) -> Vec<u64> + 'a>;

/// A named derived variable.
pub struct Column<'a> {
    pub name: String,
    f: KeyFn<'a>,
}

impl<'a> Column<'a> {
    pub fn new(name: impl Into<String>, f: impl Fn(&Outcome) -> Vec<u64> + 'a) -> Self {
        Column { name: name.into(), f: Box::new(f) }
    }

    /// Current VM-visible features.
    pub fn x_vm() -> Column<'a> {
        Column::new("x_vm", |o| o.cur.vm.iter().map(|&v| u64::from(v)).collect())
    }

    /// Current values of the listed extra features.
    pub fn extras(name: &str, idx: &'a [usize]) -> Column<'a> {
        Column::new(name, move |o| idx.iter().map(|&j| u64::from(o.cur.extra[j])).collect())
    }

    /// Past VM features and labels.
    pub fn history() -> Column<'a> {
        Column::new("H", |o| {
            let mut k = Vec::with_capacity(o.past.len() * 4);
            for e in o.past {
                k.extend(e.vm.iter().map(|&v| u64::from(v)));
                k.push(u64::from(e.label));
            }
            k
        })
    }

    /// Past values of the listed extra features.
    pub fn extras_history(name: &str, idx: &'a [usize]) -> Column<'a> {
        Column::new(name, move |o| {
            o.past
                .iter()
                .flat_map(|e| idx.iter().map(move |&j| u64::from(e.extra[j])))
                .collect()
        })
    }

    pub fn label() -> Column<'a> {
        Column::new("y", |o| vec![u64::from(o.cur.label)])
    }
}

struct EventCombo {
    vm: Vec<u32>,
    extra: Vec<u32>,
    prob: f64,
}

/// Per-event feature combinations for a fixed user draw.
fn event_combos(spec: &WorldSpec, user: &[u32]) -> Vec<EventCombo> {
    let mut combos = vec![EventCombo { vm: vec![], extra: vec![], prob: 1.0 }];
    for (fi, f) in spec.features.iter().enumerate() {
        let choices: Vec<(u32, f64)> = if f.per_user() {
            vec![(user[fi], 1.0)]
        } else {
            f.probs.iter().enumerate().map(|(v, &p)| (v as u32, p)).collect()
        };
        let mut next = Vec::with_capacity(combos.len() * choices.len());
        for c in &combos {
            for &(v, p) in &choices {
                let (mut vm, mut extra) = (c.vm.clone(), c.extra.clone());
                match f.owner {
                    Owner::VmVisible => vm.push(v),
                    Owner::FmExtra => extra.push(v),
                }
                next.push(EventCombo { vm, extra, prob: c.prob * p });
            }
        }
        combos = next;
    }
    combos
}

/// Number of outcomes enumerated for a given history depth.
pub fn outcome_count(spec: &WorldSpec, depth: usize) -> f64 {
    let mut users = 1.0;
    let mut per_event = 2.0;
    for f in &spec.features {
        if f.per_user() {
            users *= f.cardinality() as f64;
        } else {
            per_event *= f.cardinality() as f64;
        }
    }
    users * per_event.powi(depth as i32 + 1)
}

/// Visits every outcome with `depth` past events together with its probability.
pub fn enumerate(spec: &WorldSpec, depth: usize, budget: usize, mut visit: impl FnMut(&Outcome, f64)) -> Result<()> {
    spec.validate()?;
    let n = outcome_count(spec, depth);
    if n > budget as f64 {
        return Err(Error::Size(format!("{n:.3e} outcomes exceed budget {budget}")));
    }
    let user_feats: Vec<usize> = (0..spec.features.len()).filter(|&i| spec.features[i].per_user()).collect();
    let mut user = vec![0u32; spec.features.len()];
    loop {
        let p_user: f64 = user_feats
            .iter()
            .map(|&i| spec.features[i].probs[user[i] as usize])
            .product();
        let combos = event_combos(spec, &user);
        let mut stack = Vec::with_capacity(depth + 1);
        let mut labels = Vec::with_capacity(depth + 1);
        descend(spec, &combos, depth, p_user, &mut stack, &mut labels, &mut visit);
        // advance the mixed-radix user counter
        let mut k = 0;
        loop {
            if k == user_feats.len() {
                return Ok(());
            }
            let fi = user_feats[k];
            user[fi] += 1;
            if (user[fi] as usize) < spec.features[fi].cardinality() {
                break;
            }
            user[fi] = 0;
            k += 1;
        }
    }
}

fn descend(
    spec: &WorldSpec,
    combos: &[EventCombo],
    remaining: usize,
    prob: f64,
    stack: &mut Vec<EventVals>,
    labels: &mut Vec<u8>,
    visit: &mut impl FnMut(&Outcome, f64),
) {
    let count = spec.temporal_count(labels);
    for c in combos {
        let p1 = spec.p_true(&c.vm, &c.extra, count);
        for label in [0u8, 1u8] {
            let pl = if label == 1 { p1 } else { 1.0 - p1 };
            let q = prob * c.prob * pl;
            if q == 0.0 {
                continue;
            }
            stack.push(EventVals { vm: c.vm.clone(), extra: c.extra.clone(), label, p: p1 });
            if remaining == 0 {
                let (past, cur) = stack.split_at(stack.len() - 1);
                visit(&Outcome { past, cur: &cur[0] }, q);
            } else {
                labels.push(label);
                descend(spec, combos, remaining - 1, q, stack, labels, visit);
                labels.pop();
            }
            stack.pop();
        }
    }
}

/// Sparse joint distribution of derived columns.
///
/// Ids of each column are assigned in lexicographic order of the column's keys,
/// so they do not depend on enumeration order.
#[derive(Clone, Debug)]
pub struct Enumeration {
    pub names: Vec<String>,
    pub cards: Vec<usize>,
    /// Sorted keys of each column; `keys[c][id]` is the key behind dense id `id`.
    pub keys: Vec<Vec<Vec<u64>>>,
    pub cells: BTreeMap<Vec<u32>, f64>,
}

impl Enumeration {
    /// Enumerates the law at a fixed history depth.
    pub fn at_depth(spec: &WorldSpec, depth: usize, columns: &[Column]) -> Result<Enumeration> {
        Self::mixture(spec, &[(depth, 1.0)], columns)
    }

    /// Weighted mixture over history depths (e.g. event positions within a user's log).
    pub fn mixture(spec: &WorldSpec, depths: &[(usize, f64)], columns: &[Column]) -> Result<Enumeration> {
        let mut interners: Vec<HashMap<Vec<u64>, u32>> = vec![HashMap::new(); columns.len()];
        let mut raw: HashMap<Vec<u32>, f64> = HashMap::new();
        for &(depth, w) in depths {
            enumerate(spec, depth, DEFAULT_BUDGET, |o, p| {
                let ids: Vec<u32> = columns
                    .iter()
                    .zip(interners.iter_mut())
                    .map(|(c, int)| {
                        let key = (c.f)(o);
                        let next = int.len() as u32;
                        *int.entry(key).or_insert(next)
                    })
                    .collect();
                *raw.entry(ids).or_insert(0.0) += w * p;
            })?;
        }
        let mut keys = Vec::with_capacity(columns.len());
        let mut remap = Vec::with_capacity(columns.len());
        for int in interners {
            let mut sorted: Vec<(Vec<u64>, u32)> = int.into_iter().collect();
            sorted.sort();
            let mut map = vec![0u32; sorted.len()];
            for (new, (_, old)) in sorted.iter().enumerate() {
                map[*old as usize] = new as u32;
            }
            keys.push(sorted.into_iter().map(|(k, _)| k).collect::<Vec<_>>());
            remap.push(map);
        }
        let cells = raw
            .into_iter()
            .map(|(ids, p)| (ids.iter().zip(&remap).map(|(&i, m)| m[i as usize]).collect(), p))
            .collect();
        Ok(Enumeration {
            names: columns.iter().map(|c| c.name.clone()).collect(),
            cards: keys.iter().map(|k: &Vec<Vec<u64>>| k.len().max(1)).collect(),
            keys,
            cells,
        })
    }

    /// Uniform mixture over every event position of a user's log.
    pub fn log_mixture(spec: &WorldSpec, columns: &[Column]) -> Result<Enumeration> {
        let n = spec.events_per_user.max(1);
        let depths: Vec<(usize, f64)> = (0..n).map(|d| (d, 1.0 / n as f64)).collect();
        Self::mixture(spec, &depths, columns)
    }

    fn position(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|m| m == name)
            .ok_or_else(|| Error::Schema(format!("unknown variable `{name}`")))
    }

    /// Dense table over a subset of the columns.
    pub fn table(&self, names: &[&str]) -> Result<JointTable> {
        let pos: Vec<usize> = names.iter().map(|n| self.position(n)).collect::<Result<_>>()?;
        let cards: Vec<usize> = pos.iter().map(|&i| self.cards[i]).collect();
        JointTable::from_cells(
            names.iter().map(|s| s.to_string()).collect(),
            cards,
            self.cells
                .iter()
                .map(|(ids, &p)| (pos.iter().map(|&i| ids[i] as usize).collect::<Vec<_>>(), p)),
        )
    }

    pub fn full_table(&self) -> Result<JointTable> {
        let names: Vec<&str> = self.names.iter().map(String::as_str).collect();
        self.table(&names)
    }
}

/// `P(y = 1 | conditioning columns)` with the probability mass of each conditioning cell.
#[derive(Clone, Debug)]
pub struct CondTable {
    pub names: Vec<String>,
    pub cards: Vec<usize>,
    pub keys: Vec<Vec<Vec<u64>>>,
    pub mass: Vec<f64>,
    pub p_y1: Vec<f64>,
}

/// Exact conditional law of the current label given derived columns, at a fixed depth.
pub fn true_conditional(spec: &WorldSpec, depth: usize, conditioning: Vec<Column>) -> Result<CondTable> {
    let mut cols = conditioning;
    cols.push(Column::label());
    let en = Enumeration::at_depth(spec, depth, &cols)?;
    let k = cols.len() - 1;
    let cards = en.cards[..k].to_vec();
    let strides = {
        let mut s = vec![1usize; k];
        for i in (0..k.saturating_sub(1)).rev() {
            s[i] = s[i + 1] * cards[i + 1];
        }
        s
    };
    let n: usize = cards.iter().product();
    let mut mass = vec![0.0; n];
    let mut p1 = vec![0.0; n];
    for (ids, &p) in &en.cells {
        let flat: usize = ids[..k].iter().zip(&strides).map(|(&i, s)| i as usize * s).sum();
        mass[flat] += p;
        if en.keys[k][ids[k] as usize] == [1] {
            p1[flat] += p;
        }
    }
    for (m, q) in mass.iter().zip(p1.iter_mut()) {
        *q = if *m > 0.0 { *q / m } else { f64::NAN };
    }
    Ok(CondTable {
        names: en.names[..k].to_vec(),
        cards,
        keys: en.keys[..k].to_vec(),
        mass,
        p_y1: p1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infotheory::InfoMeasure;
    use crate::synthworld::{FeatureSpec, RandomWorld, Side};

    fn coins() -> WorldSpec {
        let coin = |name: &str| FeatureSpec {
            name: name.into(),
            owner: Owner::VmVisible,
            side: Side::Item,
            probs: vec![0.5, 0.5],
            weights: vec![0.0, 0.0],
        };
        WorldSpec {
            n_users: 1,
            events_per_user: 1,
            features: vec![coin("a"), coin("b")],
            bias: 0.0,
            beta_temp: 0.0,
            window: 1,
            cap: 1,
            label_noise: 0.0,
            seed: 0,
        }
    }

    fn small(beta: f64, extras: Vec<(usize, Side)>, seed: u64) -> WorldSpec {
        let opts = RandomWorld {
            vm: vec![(2, Side::Item), (2, Side::User)],
            extras,
            weight_scale: 0.9,
            extra_scale: 1.0,
            beta_temp: beta,
            window: 2,
            cap: 2,
            bias: -0.3,
        };
        WorldSpec::random(&opts, 1, 4, seed)
    }

    fn lookup(t: &CondTable, keys: &[Vec<u64>]) -> usize {
        let mut flat = 0;
        for (c, k) in keys.iter().enumerate() {
            flat = flat * t.cards[c] + t.keys[c].binary_search(k).unwrap();
        }
        flat
    }

    #[test]
    fn independent_coins_fill_four_cells() {
        let cols = [Column::new("a", |o| vec![u64::from(o.cur.vm[0])]), Column::new("b", |o| vec![u64::from(o.cur.vm[1])])];
        let t = Enumeration::at_depth(&coins(), 0, &cols).unwrap().table(&["a", "b"]).unwrap();
        assert_eq!(t.probs(), &[0.25; 4]);
    }

    #[test]
    fn mass_sums_to_one() {
        let spec = small(0.8, vec![(3, Side::User), (2, Side::Context)], 3);
        for depth in 0..4 {
            let en = Enumeration::at_depth(&spec, depth, &[Column::x_vm(), Column::history(), Column::label()]).unwrap();
            let total: f64 = en.cells.values().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!((en.full_table().unwrap().total_mass() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn full_conditioning_recovers_generative_law() {
        let spec = small(0.8, vec![(3, Side::User)], 5);
        let all = [0usize];
        let t = true_conditional(&spec, 3, vec![Column::x_vm(), Column::extras("ex", &all), Column::history()]).unwrap();
        let mut checked = 0;
        enumerate(&spec, 3, DEFAULT_BUDGET, |o, _| {
            let h: Vec<u64> = o.past.iter().flat_map(|e| e.vm.iter().map(|&v| u64::from(v)).chain([u64::from(e.label)])).collect();
            let keys = vec![
                o.cur.vm.iter().map(|&v| u64::from(v)).collect(),
                vec![u64::from(o.cur.extra[0])],
                h,
            ];
            let i = lookup(&t, &keys);
            assert!((t.p_y1[i] - o.cur.p).abs() < 1e-12);
            checked += 1;
        })
        .unwrap();
        assert!(checked > 0);
    }

    #[test]
    fn empty_conditioning_gives_base_rate() {
        let spec = small(0.5, vec![(2, Side::Item)], 9);
        let t = true_conditional(&spec, 2, vec![]).unwrap();
        let mut base = 0.0;
        enumerate(&spec, 2, DEFAULT_BUDGET, |o, p| {
            if o.cur.label == 1 {
                base += p;
            }
        })
        .unwrap();
        assert_eq!(t.p_y1.len(), 1);
        assert!((t.p_y1[0] - base).abs() < 1e-12);
    }

    #[test]
    fn channel_off_means_no_temporal_information() {
        let spec = small(0.0, vec![], 2);
        let en = Enumeration::at_depth(&spec, 3, &[Column::x_vm(), Column::history(), Column::label()]).unwrap();
        assert!(en.cond_mutual_info(&["H"], &["y"], &["x_vm"]).unwrap() < 1e-12);
        let theory = WorldSpec::default_theory();
        let en = Enumeration::at_depth(&theory, 5, &[Column::x_vm(), Column::history(), Column::label()]).unwrap();
        assert!(en.cond_mutual_info(&["H"], &["y"], &["x_vm"]).unwrap() > 0.05);
    }

    #[test]
    fn extras_reduce_label_entropy() {
        for seed in 0..6 {
            let spec = small(0.6, vec![(3, Side::User), (2, Side::Context)], seed);
            let idx = [0usize, 1];
            let en = Enumeration::at_depth(&spec, 1, &[Column::x_vm(), Column::extras("ex", &idx), Column::label()]).unwrap();
            let a = en.cond_entropy(&["y"], &["x_vm"]).unwrap();
            let b = en.cond_entropy(&["y"], &["x_vm", "ex"]).unwrap();
            assert!(a >= b - 1e-12, "seed {seed}: {a} < {b}");
        }
    }

    #[test]
    fn marginalizing_extras_matches_vm_table() {
        let spec = small(0.7, vec![(3, Side::User)], 4);
        let idx = [0usize];
        let full = Enumeration::at_depth(&spec, 2, &[Column::x_vm(), Column::label(), Column::extras("ex", &idx)]).unwrap();
        let vm_only = Enumeration::at_depth(&spec, 2, &[Column::x_vm(), Column::label()]).unwrap();
        let a = full.full_table().unwrap().marginal(&["x_vm", "y"]).unwrap();
        let b = vm_only.full_table().unwrap();
        for (p, q) in a.probs().iter().zip(b.probs()) {
            assert!((p - q).abs() < 1e-14);
        }
    }

    #[test]
    fn budget_is_enforced() {
        let err = Enumeration::at_depth(&WorldSpec::default_experiment(1), 3, &[Column::label()]).unwrap_err();
        assert!(matches!(err, Error::Size(_)));
    }
}
