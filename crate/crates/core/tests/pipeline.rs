mod common;

use std::path::Path;

use trajscope::meta::meta_from_table;
use trajscope::pipeline::{run_pipeline, RunConfig, StageName, StageStatus, MANIFEST_FILE};
use trajscope::synth::generate_ecosystem;
use trajscope::table::{Format, Table};

fn small_run(dir: &Path, out: &str) -> RunConfig {
    let entries = common::planted_ecosystem(6, 60, 2.0, |i, _| format!("fw-{}", i % 3));
    let corpus = generate_ecosystem(&entries, 11).unwrap();
    let input = common::write_corpus(dir, "corpus.jsonl", &corpus);
    let mut cfg = RunConfig::new(input, dir.join(out));
    cfg.thresholds = Some(common::reference_thresholds(dir));
    cfg.n_boot = 200;
    cfg.n_perm = 200;
    cfg.k = 3;
    cfg.seed = 7;
    cfg
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn full_run_then_rerun_is_skipped_and_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run(dir.path(), "out");
    let first = run_pipeline(&cfg).unwrap();
    assert!(first.stages.iter().all(|(_, s)| *s == StageStatus::Ran), "{:?}", first.stages);
    let before = read_all(&cfg.out_dir);
    for name in [
        "canonical.jsonl",
        "annotated.jsonl",
        "features.csv",
        "traj_features.csv",
        "cfg_features.csv",
        "patterns.csv",
        "effects.csv",
        "skips.csv",
        "meta.csv",
        "fits.csv",
        "robust.json",
        "model.json",
        "types.csv",
        "report.csv",
        "beeswarm.csv",
        MANIFEST_FILE,
    ] {
        assert!(before.iter().any(|(n, _)| n == name), "missing {name}");
    }
    assert!(before.iter().all(|(n, _)| !n.ends_with(".partial")));

    let meta = meta_from_table(&Table::read_path(&cfg.out_dir.join("meta.csv")).unwrap()).unwrap();
    let turns = meta.iter().find(|m| m.feature == "mean_turns").unwrap();
    assert_eq!(turns.k, 6);
    assert_eq!((turns.n_pos, turns.n_neg), (3, 3));

    let second = run_pipeline(&cfg).unwrap();
    assert!(second.stages.iter().all(|(_, s)| *s == StageStatus::UpToDate), "{:?}", second.stages);
    assert_eq!(read_all(&cfg.out_dir), before);
}

#[test]
fn changed_parameter_reruns_downstream_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_run(dir.path(), "out");
    run_pipeline(&cfg).unwrap();
    cfg.zero_band = 0.05;
    let again = run_pipeline(&cfg).unwrap();
    let status = |s: StageName| again.stages.iter().find(|(n, _)| *n == s).unwrap().1;
    assert_eq!(status(StageName::Effects), StageStatus::UpToDate);
    assert_eq!(status(StageName::Meta), StageStatus::Ran);
    assert_eq!(status(StageName::Robust), StageStatus::UpToDate);
    // meta.csv changed, so the report is rebuilt
    assert_eq!(status(StageName::Report), StageStatus::Ran);
}

#[test]
fn missing_threshold_manifest_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_run(dir.path(), "out");
    cfg.thresholds = None;
    let err = run_pipeline(&cfg).unwrap_err().to_string();
    assert!(err.contains("patterns") && err.contains("threshold manifest"), "{err}");

    cfg.thresholds = Some(dir.path().join("nope.json"));
    let err = run_pipeline(&cfg).unwrap_err().to_string();
    assert!(err.contains("nope.json"), "{err}");

    cfg.thresholds = None;
    cfg.skip.insert(StageName::Patterns);
    run_pipeline(&cfg).unwrap();
}

#[test]
fn failing_stage_keeps_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_run(dir.path(), "out");
    // more clusters than configurations
    cfg.k = 50;
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(err.to_string().contains("stage `taxonomy` failed"), "{err}");
    assert!(cfg.out_dir.join("meta.csv").exists());
    assert!(!cfg.out_dir.join("model.json").exists());
    assert!(cfg.out_dir.join(MANIFEST_FILE).exists());
}

#[test]
fn json_format_and_thread_count_do_not_change_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut serial = small_run(dir.path(), "serial");
    serial.format = Format::Json;
    serial.jobs = 1;
    let mut parallel = serial.clone();
    parallel.out_dir = dir.path().join("parallel");
    parallel.jobs = 8;
    run_pipeline(&serial).unwrap();
    run_pipeline(&parallel).unwrap();
    let a = read_all(&serial.out_dir);
    assert!(a.iter().any(|(n, _)| n == "meta.json"));
    assert_eq!(a, read_all(&parallel.out_dir));
}
