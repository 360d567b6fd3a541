use std::path::Path;
use std::process::{Command, Output};

const SPEC: &str = r#"{
  "regimes": [{
    "name": "base",
    "length_dist": {"min": 5, "max": 40, "mode": 15},
    "action_mix": {"exploration": 0.4, "modification": 0.2, "test": 0.2, "navigation": 0.1, "utility": 0.1},
    "error_prob": 0.15,
    "cascade_stickiness": 0.4,
    "repeat_prob": 0.1,
    "outcome_model": {"feature": "n_turns", "direction": "lower", "strength": 1.0}
  }],
  "configurations": [
    {"framework": "fw1", "llm": "m1", "llm_family": "f1", "n": 60, "regime": "base"},
    {"framework": "fw2", "llm": "m2", "llm_family": "f2", "n": 60, "regime": "base"},
    {"framework": "fw1", "llm": "m3", "llm_family": "f1", "n": 60, "regime": "base"},
    {"framework": "fw2", "llm": "m4", "llm_family": "f2", "n": 60, "regime": "base"}
  ]
}"#;

fn trajscope(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajscope"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = trajscope(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn synth_corpus(dir: &Path) {
    std::fs::write(dir.join("spec.json"), SPEC).unwrap();
    ok(dir, &["--seed", "5", "synth", "--spec", "spec.json", "--out", "corpus.jsonl"]);
}

#[test]
fn stage_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth_corpus(d);
    ok(d, &["ingest", "--in", "corpus.jsonl", "--out", "canonical.jsonl", "--report", "ingest.json"]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("ingest.json")).unwrap()).unwrap();
    assert_eq!(report["trajectories_parsed"], 240);
    ok(d, &["annotate", "--in", "canonical.jsonl", "--out", "annotated.jsonl"]);
    ok(d, &["patterns", "calibrate", "--in", "annotated.jsonl", "--out", "thresholds.json"]);
    ok(d, &["features", "--in", "annotated.jsonl", "--out", "features.csv", "--per-trajectory", "traj.csv"]);
    ok(d, &["cfg", "--in", "annotated.jsonl", "--out", "cfg.csv", "--export-dot", "dots"]);
    assert_eq!(std::fs::read_dir(d.join("dots")).unwrap().count(), 240);
    ok(d, &["patterns", "--in", "annotated.jsonl", "--manifest", "thresholds.json", "--out", "patterns.csv"]);
    ok(d, &["effects", "--traj", "traj.csv", "--features", "cfg.csv", "--patterns", "patterns.csv", "--out", "effects.csv"]);
    assert!(d.join("effects.csv.meta.json").exists());
    ok(d, &["meta", "--effects", "effects.csv", "--out", "meta.csv"]);
    ok(d, &["meta", "regress", "--effects", "effects.csv", "--moderator", "framework", "--out", "fits.csv"]);
    ok(d, &["robust", "--effects", "effects.csv", "--feature", "mean_turns", "--n-boot", "100", "--n-perm", "100", "--out", "robust.json"]);
    ok(d, &["taxonomy", "fit", "--features", "features.csv", "--k", "2", "--out", "model.json"]);
    ok(d, &["taxonomy", "assign", "--model", "model.json", "--features", "features.csv", "--out", "types.csv"]);
    let sweep = ok(d, &["taxonomy", "sweep", "--features", "features.csv", "--k-range", "2:3"]);
    assert_eq!(String::from_utf8_lossy(&sweep.stdout).lines().count(), 3);
    ok(d, &["report", "--meta", "meta.csv", "--fits", "fits.csv", "--robust", "robust.json", "--out", "report.json"]);

    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("report.json")).unwrap()).unwrap();
    let row = report
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["feature"] == "mean_turns")
        .expect("mean_turns reported");
    assert_eq!(row["k"], 4);
    // lower turn counts resolve more often in every configuration, which is a
    // positive rank-biserial effect
    assert_eq!(row["n_pos"], 4);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(trajscope(d, &["--help"]).status.code(), Some(0));
    assert_eq!(trajscope(d, &["meta", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(trajscope(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(trajscope(d, &["taxonomy", "sweep", "--features", "f.csv", "--k-range", "5"]).status.code(), Some(1));

    let missing = trajscope(d, &["patterns", "--in", "a.jsonl", "--manifest", "thresholds.json"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("thresholds.json"));

    std::fs::write(d.join("bad.csv"), "feature,kind\nx,y\n").unwrap();
    let schema = trajscope(d, &["meta", "--effects", "bad.csv"]);
    assert_eq!(schema.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&schema.stderr).contains("missing column"));
}

#[test]
fn run_needs_thresholds_and_is_incremental() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth_corpus(d);
    let base = ["--out-dir", "out", "run", "--in", "corpus.jsonl", "--n-boot", "50", "--n-perm", "50", "--k", "2"];

    let no_thresholds = trajscope(d, &base);
    assert_eq!(no_thresholds.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&no_thresholds.stderr).contains("threshold manifest"));

    ok(d, &["patterns", "calibrate", "--in", "corpus.jsonl", "--out", "thresholds.json"]);
    let mut args = base.to_vec();
    args.extend(["--thresholds", "thresholds.json"]);
    let first = ok(d, &args);
    assert!(String::from_utf8_lossy(&first.stderr).contains("report    ran"));
    let manifest = std::fs::read(d.join("out/run_manifest.json")).unwrap();
    let second = ok(d, &args);
    let log = String::from_utf8_lossy(&second.stderr);
    assert!(!log.contains(" ran"), "{log}");
    assert_eq!(std::fs::read(d.join("out/run_manifest.json")).unwrap(), manifest);
    assert!(d.join("out/report.csv").exists());
}
