use serde::{Deserialize, Serialize};

use super::config::TheoryConfig;
use crate::error::{Error, Result};
use crate::infotheory::worlds::{run_a3_violation, run_battery, run_delta_sweep};
use crate::infotheory::{eval_tr_lower_bound, verify_monotone_l, TRBoundParams, TheoryPipeline};
use crate::synthworld::WorldSpec;

const IDENTITY_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryRow {
    pub index: usize,
    pub depth: usize,
    pub gain_residual: f64,
    pub cross_residual: f64,
    pub eta: f64,
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: usize,
    pub tr_pop: f64,
    pub tr_lb: f64,
    pub a3_holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct A3Row {
    pub tr_pop: f64,
    pub eta2: f64,
    pub a3_holds: bool,
    pub negative_condition: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheorySummary {
    pub battery: Vec<BatteryRow>,
    pub max_gain_residual: f64,
    pub max_cross_residual: f64,
    pub monotone_values: Vec<f64>,
    pub monotone_ceiling: f64,
    pub sweep: Vec<SweepRow>,
    pub sweep_params: TRBoundParams,
    /// `(δ, TR_LB(δ))` on an even grid over the swept range.
    pub lb_grid: Vec<(f64, f64)>,
    pub lb_limit: f64,
    pub a3: A3Row,
    /// Named pass/fail checks, in report order.
    pub checks: Vec<(String, bool)>,
}

impl TheorySummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|(_, ok)| *ok)
    }

    pub fn failed_checks(&self) -> Vec<&str> {
        self.checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| n.as_str()).collect()
    }

    /// `Err(Verification)` listing the failed checks.
    pub fn into_result(self) -> Result<TheorySummary> {
        if self.passed() {
            Ok(self)
        } else {
            Err(Error::Verification(format!("failed: {}", self.failed_checks().join(", "))))
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Exact checks on enumerable worlds; never fails on a violated check, see [`TheorySummary::into_result`].
pub fn run_theory_suite(cfg: &TheoryConfig) -> Result<TheorySummary> {
    if cfg.deltas.is_empty() || cfg.deltas.contains(&0) {
        return Err(Error::config("theory.deltas must be nonempty and positive"));
    }
    let entries = run_battery(cfg.battery_seed, cfg.battery_size)?;
    let battery: Vec<BatteryRow> = entries
        .iter()
        .map(|e| BatteryRow {
            index: e.index,
            depth: e.depth,
            gain_residual: e.gain.identity_residual,
            cross_residual: e.pipeline.cross_identity_residual,
            eta: e.pipeline.eta,
            failures: e.inequality_failures(),
        })
        .collect();
    let max_gain_residual = battery.iter().map(|b| b.gain_residual).fold(0.0, f64::max);
    let max_cross_residual = battery.iter().map(|b| b.cross_residual).fold(0.0, f64::max);

    let spec = WorldSpec::default_theory();
    let mono = verify_monotone_l(&spec, &TheoryPipeline::lossless(&spec, &[0, 1]), cfg.l_max)?;

    let sweep = run_delta_sweep(&cfg.deltas)?;
    let sweep_rows: Vec<SweepRow> = sweep
        .deltas
        .iter()
        .zip(&sweep.instances)
        .zip(sweep.tr_pop.iter().zip(&sweep.tr_lb))
        .map(|((&delta, inst), (&tr_pop, &tr_lb))| SweepRow { delta, tr_pop, tr_lb, a3_holds: inst.a3_holds })
        .collect();
    let lo = *cfg.deltas.iter().min().expect("nonempty") as f64;
    let hi = *cfg.deltas.iter().max().expect("nonempty") as f64;
    let lb_grid = linspace(lo, hi, cfg.grid_points)
        .into_iter()
        .map(|d| eval_tr_lower_bound(&sweep.params.with_delta(d)).map(|v| (d, v)))
        .collect::<Result<Vec<_>>>()?;
    let lb_limit = sweep.params.limit();

    let a3 = run_a3_violation()?;
    let a3_row = A3Row {
        tr_pop: a3.tr_pop,
        eta2: a3.pipe2.eta,
        a3_holds: a3.a3_holds,
        negative_condition: a3.negative_condition,
    };

    let grid_monotone = lb_grid.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-12);
    let grid_below_limit = lb_grid.iter().all(|&(_, v)| v <= lb_limit + 1e-12);
    let checks = vec![
        (
            "battery identities".to_string(),
            !battery.is_empty() && max_gain_residual < IDENTITY_TOL && max_cross_residual < IDENTITY_TOL,
        ),
        ("battery inequalities".to_string(), battery.iter().all(|b| b.failures.is_empty())),
        ("monotone in L".to_string(), mono.non_decreasing() && mono.bounded()),
        ("TR_pop >= TR_LB".to_string(), sweep.all_hold()),
        ("TR_LB non-decreasing".to_string(), sweep.lb_non_decreasing() && grid_monotone && grid_below_limit),
        ("A3 violation negative".to_string(), !a3.a3_holds && a3.negative_condition < 0.0 && a3.tr_pop < 0.0),
    ];
    Ok(TheorySummary {
        battery,
        max_gain_residual,
        max_cross_residual,
        monotone_values: mono.values,
        monotone_ceiling: mono.ceiling,
        sweep: sweep_rows,
        sweep_params: sweep.params,
        lb_grid,
        lb_limit,
        a3: a3_row,
        checks,
    })
}
