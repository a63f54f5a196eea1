//! Tab-separated tables, JSON artifacts and a plain-text summary.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::ablation::{AblationAxis, AblationTable};
use super::experiment::RunReport;
use super::theory::TheorySummary;
use crate::error::{Error, Result};

pub const RUN_JSON: &str = "run.json";
pub const THEORY_JSON: &str = "theory.json";
pub const SUMMARY_TXT: &str = "summary.txt";

pub fn ablation_json(axis: AblationAxis) -> String {
    format!("ablation_{}.json", axis.name())
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn tsv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join("\t");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join("\t"));
        out.push('\n');
    }
    out
}

fn num(v: f64) -> String {
    format!("{v:.6}")
}

/// One row per (seed, arm).
pub fn arms_tsv(r: &RunReport) -> String {
    let rows = r.seeds.iter().flat_map(|s| {
        s.arms.iter().map(move |a| {
            vec![
                s.seed.to_string(),
                a.arm.name().into(),
                num(a.eval.auc),
                num(a.eval.logloss),
                num(a.eval.ne),
                a.eval.n_samples.to_string(),
            ]
        })
    });
    tsv(&["seed", "arm", "auc", "logloss", "ne", "n_samples"], rows)
}

pub fn arm_summary_tsv(r: &RunReport) -> String {
    let rows = r.summary.iter().map(|a| vec![a.arm.name().into(), num(a.mean_auc), num(a.mean_ne)]);
    tsv(&["arm", "mean_auc", "mean_ne"], rows)
}

/// One row per (setting, seed); extra columns are the union of row extras, blank when absent.
pub fn ablation_tsv(t: &AblationTable) -> String {
    let keys: BTreeSet<&str> = t.rows.iter().flat_map(|r| r.extras.keys().map(String::as_str)).collect();
    let mut header = vec!["setting", "seed", "auc", "logloss", "ne"];
    header.extend(keys.iter().copied());
    let rows = t.rows.iter().map(|r| {
        let mut v = vec![r.setting.clone(), r.seed.to_string(), num(r.eval.auc), num(r.eval.logloss), num(r.eval.ne)];
        v.extend(keys.iter().map(|k| r.extras.get(*k).map(|x| num(*x)).unwrap_or_default()));
        v
    });
    tsv(&header, rows)
}

/// `(setting, mean AUC)` in setting order.
pub fn ablation_plot_tsv(t: &AblationTable) -> String {
    let rows = t
        .settings()
        .into_iter()
        .map(|s| vec![s.clone(), t.mean_auc(&s).map(num).unwrap_or_default()]);
    tsv(&["x", "mean_auc"], rows)
}

pub fn theory_battery_tsv(t: &TheorySummary) -> String {
    let rows = t.battery.iter().map(|b| {
        vec![
            b.index.to_string(),
            b.depth.to_string(),
            format!("{:.3e}", b.gain_residual),
            format!("{:.3e}", b.cross_residual),
            num(b.eta),
            b.failures.len().to_string(),
        ]
    });
    tsv(&["world", "depth", "gain_residual", "cross_residual", "eta", "failures"], rows)
}

pub fn theory_sweep_tsv(t: &TheorySummary) -> String {
    let rows = t
        .sweep
        .iter()
        .map(|r| vec![r.delta.to_string(), num(r.tr_pop), num(r.tr_lb), r.a3_holds.to_string()]);
    tsv(&["delta", "tr_pop", "tr_lb", "a3_holds"], rows)
}

pub fn theory_lb_grid_tsv(t: &TheorySummary) -> String {
    tsv(&["delta", "tr_lb"], t.lb_grid.iter().map(|(d, v)| vec![num(*d), num(*v)]))
}

pub fn theory_monotone_tsv(t: &TheorySummary) -> String {
    let rows = t.monotone_values.iter().enumerate().map(|(l, v)| vec![l.to_string(), num(*v)]);
    tsv(&["L", "cmi"], rows)
}

/// All artifacts of an output directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub run: Option<RunReport>,
    pub ablations: Vec<AblationTable>,
    pub theory: Option<TheorySummary>,
}

impl ReportBundle {
    /// Reads whichever JSON artifacts exist under `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<ReportBundle> {
        let dir = dir.as_ref();
        let opt = |name: &str| -> Option<PathBuf> { Some(dir.join(name)).filter(|p| p.exists()) };
        let run = opt(RUN_JSON).map(read_json).transpose()?;
        let theory = opt(THEORY_JSON).map(read_json).transpose()?;
        let ablations = AblationAxis::ALL
            .into_iter()
            .filter_map(|a| opt(&ablation_json(a)))
            .map(read_json)
            .collect::<Result<Vec<_>>>()?;
        Ok(ReportBundle { run, ablations, theory })
    }

    pub fn is_empty(&self) -> bool {
        self.run.is_none() && self.ablations.is_empty() && self.theory.is_none()
    }

    /// Writes every table and the summary; returns the files written.
    pub fn write_tables(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        let mut files: Vec<(String, String)> = Vec::new();
        if let Some(r) = &self.run {
            files.push(("arms.tsv".into(), arms_tsv(r)));
            files.push(("arm_summary.tsv".into(), arm_summary_tsv(r)));
        }
        for t in &self.ablations {
            files.push((format!("ablation_{}.tsv", t.axis.name()), ablation_tsv(t)));
            files.push((format!("ablation_{}_plot.tsv", t.axis.name()), ablation_plot_tsv(t)));
        }
        if let Some(t) = &self.theory {
            files.push(("theory_battery.tsv".into(), theory_battery_tsv(t)));
            files.push(("theory_sweep.tsv".into(), theory_sweep_tsv(t)));
            files.push(("theory_lb_grid.tsv".into(), theory_lb_grid_tsv(t)));
            files.push(("theory_monotone.tsv".into(), theory_monotone_tsv(t)));
        }
        files.push((SUMMARY_TXT.into(), self.render()));
        let mut written = Vec::with_capacity(files.len());
        for (name, text) in files {
            let p = dir.join(name);
            write_text(&p, &text)?;
            written.push(p);
        }
        Ok(written)
    }

    /// Plain-text summary.
    pub fn render(&self) -> String {
        let mut s = String::new();
        if let Some(r) = &self.run {
            let _ = writeln!(s, "streaming experiment  config {}  version {}", &r.config_hash[..12.min(r.config_hash.len())], r.code_version);
            let seeds: Vec<String> = r.seeds.iter().map(|x| x.seed.to_string()).collect();
            let _ = writeln!(s, "seeds: {}", seeds.join(", "));
            for a in &r.summary {
                let _ = writeln!(s, "  {:<10} mean AUC {:.4}  mean NE {:.4}", a.arm.name(), a.mean_auc, a.mean_ne);
            }
            if let (Some(k), Some(m)) = (r.ordering_holds, r.mean_margin) {
                let _ = writeln!(s, "  ordering kd_loopfm > kd > baseline in {k}/{} seeds; mean margin {m:+.4}", r.seeds.len());
            }
            s.push('\n');
        }
        for t in &self.ablations {
            let _ = writeln!(s, "ablation {}", t.axis.name());
            for setting in t.settings() {
                let _ = writeln!(s, "  {:<12} mean AUC {:.4}", setting, t.mean_auc(&setting).unwrap_or(f64::NAN));
            }
            s.push('\n');
        }
        if let Some(t) = &self.theory {
            let _ = writeln!(s, "theory suite ({} worlds)", t.battery.len());
            let _ = writeln!(s, "  max residuals: gain {:.2e}, cross {:.2e}", t.max_gain_residual, t.max_cross_residual);
            for (name, ok) in &t.checks {
                let _ = writeln!(s, "  {} {name}", if *ok { "PASS" } else { "FAIL" });
            }
            let _ = writeln!(s, "  A3-violating pipeline: TR_pop {:.4} (expected negative)", t.a3.tr_pop);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::EvalResult;
    use crate::pipeline::ablation::AblationRow;

    fn eval(auc: f64) -> EvalResult {
        EvalResult {
            auc,
            logloss: 0.5,
            ne: 0.9,
            n_samples: 10,
            base_rate: 0.3,
        }
    }

    fn table() -> AblationTable {
        let mut r1 = AblationRow {
            setting: "10".into(),
            seed: 1,
            eval: eval(0.6),
            extras: Default::default(),
        };
        r1.extras.insert("codec_mse".into(), 0.25);
        let r2 = AblationRow {
            setting: "100".into(),
            seed: 1,
            eval: eval(0.7),
            extras: Default::default(),
        };
        AblationTable {
            axis: AblationAxis::Seqlen,
            rows: vec![r1, r2],
        }
    }

    #[test]
    fn ablation_tsv_has_union_columns() {
        let text = ablation_tsv(&table());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "setting\tseed\tauc\tlogloss\tne\tcodec_mse");
        assert_eq!(lines[1].split('\t').count(), 6);
        assert!(lines[2].ends_with('\t'));
        assert_eq!(ablation_plot_tsv(&table()).lines().nth(2), Some("100\t0.700000"));
    }

    #[test]
    fn bundle_round_trips_through_directory() {
        let dir = tempfile::tempdir().unwrap();
        let b = ReportBundle {
            ablations: vec![table()],
            ..Default::default()
        };
        write_json(dir.path().join(ablation_json(AblationAxis::Seqlen)), &b.ablations[0]).unwrap();
        let back = ReportBundle::load(dir.path()).unwrap();
        assert_eq!(back, b);
        let files = back.write_tables(dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        assert!(std::fs::read_to_string(dir.path().join(SUMMARY_TXT)).unwrap().contains("ablation seqlen"));
    }

    #[test]
    fn malformed_json_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(RUN_JSON), "{").unwrap();
        assert_eq!(ReportBundle::load(dir.path()).unwrap_err().exit_code(), 4);
    }
}
