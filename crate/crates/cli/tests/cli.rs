use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seeds = [3]
[data]
n_users = 40
events_per_user = 48
[fm]
epochs = 1
[ae]
epochs = 2
[transfer]
dims = [8, 16]
d = 16
[theory]
battery_size = 2
grid_points = 4
l_max = 2
"#;

fn loopfm(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loopfm"))
        .args(args)
        .env("LOOPFM_OUT", root)
        .output()
        .expect("binary runs")
}

fn ok(root: &Path, args: &[&str]) -> String {
    let out = loopfm(root, args);
    assert!(
        out.status.success(),
        "{args:?}: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn staged_run_matches_end_to_end_eval() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = write_config(root, SMALL);
    for stage in ["gen-world", "train-fm", "extract", "train-ae", "quantize", "build-store"] {
        ok(root, &["--config", &cfg, stage]);
    }
    for f in ["events.tsv", "fm.lfmm", "fm_log.lfmm", "ae.lfmm", "codes.lfmm", "store.lfsq"] {
        assert!(root.join("seed_3").join(f).exists(), "{f}");
    }
    for arm in ["baseline", "kd_loopfm"] {
        ok(root, &["--config", &cfg, "train-vm", "--arm", arm]);
        ok(root, &["--config", &cfg, "eval", "--arm", arm]);
    }
    ok(root, &["--config", &cfg, "eval"]);
    let run: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("run.json")).unwrap()).unwrap();
    for arm in ["baseline", "kd_loopfm"] {
        let staged: serde_json::Value =
            serde_json::from_slice(&std::fs::read(root.join(format!("seed_3/eval_{arm}.json"))).unwrap()).unwrap();
        let end_to_end = run["seeds"][0]["arms"]
            .as_array()
            .unwrap()
            .iter()
            .find(|a| a["arm"] == arm)
            .unwrap()["eval"]
            .clone();
        assert_eq!(staged, end_to_end, "{arm}");
    }
    let text = ok(root, &["--config", &cfg, "report"]);
    assert!(text.contains("streaming experiment"));
    assert!(root.join("arms.tsv").exists() && root.join("summary.txt").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let bad = write_config(root, "[transfer]\nlambda = -1.0\n");
    assert_eq!(loopfm(root, &["--config", &bad, "gen-world"]).status.code(), Some(2));
    assert_eq!(loopfm(root, &["--config", "/nonexistent.toml", "report"]).status.code(), Some(2));
    assert_eq!(loopfm(root, &["ablate", "sideways"]).status.code(), Some(2));
    assert_eq!(loopfm(root, &["report"]).status.code(), Some(4));
    assert_eq!(loopfm(root, &["train-fm"]).status.code(), Some(4));
    let cfg = write_config(root, SMALL);
    let text = ok(root, &["--config", &cfg, "verify-theory"]);
    assert!(text.contains("PASS"));
    assert!(root.join("theory.json").exists());
}
