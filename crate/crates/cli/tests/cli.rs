use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fdlab_core::report::TheoremReport;

fn fdlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdlab"))
        .args(args)
        .current_dir(dir)
        .env_remove("FDLAB_SEED")
        .output()
        .expect("fdlab runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

const SMALL_LP: &str = "methods = [\"LP\"]\n[instance]\nd = 30\nk = 3\nm = 8\nn = 16\n";

#[test]
fn minimal_lp_run_writes_one_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "lp.toml", SMALL_LP);
    let out = fdlab(&["run", "lp.toml", "--out", "o"], tmp.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let traj: Vec<_> = fs::read_dir(tmp.path().join("o/trajectories"))
        .unwrap()
        .collect();
    assert_eq!(traj.len(), 1);
    let csv = fs::read_to_string(tmp.path().join("o/trajectories/i000_LP.csv")).unwrap();
    assert!(csv.lines().count() > 2);
    for f in ["config.toml", "summary.md", "manifest.json"] {
        assert!(tmp.path().join("o").join(f).is_file(), "{f}");
    }
}

#[test]
fn dimension_violation_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "bad.toml", "[instance]\nd = 10\nk = 3\nm = 7\n");
    let out = fdlab(&["run", "bad.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("m < d - k"));
    assert!(!tmp.path().join("fdlab-out").exists());
}

#[test]
fn unknown_keys_and_derived_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "typo.toml", "instnces = 3\n");
    assert_eq!(
        fdlab(&["run", "typo.toml"], tmp.path()).status.code(),
        Some(2)
    );
    write(tmp.path(), "derived.toml", "[instance]\nseed = 3\n");
    assert_eq!(
        fdlab(&["run", "derived.toml"], tmp.path()).status.code(),
        Some(2)
    );
}

#[test]
fn env_seed_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "lp.toml",
        &format!("master_seed = 1\n{SMALL_LP}"),
    );
    let run = |seed: Option<&str>, dir: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_fdlab"));
        cmd.args(["run", "lp.toml", "--out", dir])
            .current_dir(tmp.path());
        match seed {
            Some(s) => cmd.env("FDLAB_SEED", s),
            None => cmd.env_remove("FDLAB_SEED"),
        };
        assert_eq!(cmd.output().unwrap().status.code(), Some(0));
        fs::read(tmp.path().join(dir).join("trajectories/i000_LP.csv")).unwrap()
    };
    let base = run(None, "a");
    let over = run(Some("9"), "b");
    assert_ne!(base, over);
    assert!(fs::read_to_string(tmp.path().join("b/config.toml"))
        .unwrap()
        .contains("master_seed = 9"));
    assert_eq!(run(Some("1"), "c"), base);
}

#[test]
fn printed_defaults_match_repo_copy_and_load() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fdlab(&["print-defaults"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let repo = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    assert_eq!(text, fs::read_to_string(repo).unwrap());
    let parsed = fdlab_cli::config::ExperimentConfig::from_toml_str(&text).unwrap();
    assert_eq!(parsed, fdlab_cli::config::ExperimentConfig::default());
}

#[test]
fn verify_cheap_suites() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fdlab(
        &[
            "verify",
            "--suite",
            "LEM_FEATINV,lem_balance",
            "--seed",
            "3",
            "--out",
            "v",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("| LEM_FEATINV | pass"));
    let report = fs::read_to_string(tmp.path().join("v/reports/LEM_BALANCE.json")).unwrap();
    let report = TheoremReport::from_json(&report).unwrap();
    assert!(report.pass && report.evaluate());
    assert_eq!(
        fdlab(&["verify", "--suite", "THM9"], tmp.path())
            .status
            .code(),
        Some(2)
    );
}

/// LP/FT OOD ratios at eps = 0.2 .. 0.01, 10 seeds, master seed 0.
const RATIO_FIXTURE: [f64; 5] = [
    0.23716539744958945,
    0.06343583280067125,
    0.016139622119740384,
    0.002594970068910344,
    0.0006491709018484695,
];

#[test]
fn eps_sweep_is_reproducible_and_matches_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/eps_sweep.toml");
    let cfg = cfg.to_str().unwrap();
    let a = fdlab(&["sweep", cfg, "--out", "a"], tmp.path());
    assert_eq!(
        a.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&a.stderr)
    );
    let csv = fs::read_to_string(tmp.path().join("a/sweep_summary.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "sweep_value,seed,method,l_id,l_ood_min,l_ood_terminal"
    );
    assert_eq!(lines.len(), 1 + 5 * 10 * 3);

    let report = fs::read_to_string(tmp.path().join("a/reports/THM2_RATIO.json")).unwrap();
    let report = TheoremReport::from_json(&report).unwrap();
    assert!(report.pass);
    for (eps, want) in ["0.2", "0.1", "0.05", "0.02", "0.01"]
        .iter()
        .zip(RATIO_FIXTURE)
    {
        let got = report.quantity(&format!("ratio[{eps}]")).unwrap();
        assert!((got - want).abs() <= 1e-9 * want, "{eps}: {got} vs {want}");
    }

    let b = fdlab(&["sweep", cfg, "--out", "b", "--jobs", "2"], tmp.path());
    assert_eq!(b.status.code(), Some(0));
    let manifest = |d: &str| -> serde_json::Value {
        serde_json::from_slice(&fs::read(tmp.path().join(d).join("manifest.json")).unwrap())
            .unwrap()
    };
    assert_eq!(manifest("a")["files"], manifest("b")["files"]);
    assert_eq!(
        fs::read(tmp.path().join("a/sweep_summary.csv")).unwrap(),
        fs::read(tmp.path().join("b/sweep_summary.csv")).unwrap()
    );
}
