mod common;

use std::fs;

use common::{fixture, gdk};

fn path(p: &std::path::Path) -> String {
    p.to_str().unwrap().to_string()
}

#[test]
fn toy_pipeline_is_deterministic_with_manifest_chain() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    common::run_toy_pipeline(a.path()).unwrap();
    common::run_toy_pipeline(b.path()).unwrap();
    assert_eq!(
        common::snapshot_dir(a.path()),
        common::snapshot_dir(b.path())
    );
    common::check_manifest_chain(a.path()).unwrap();

    let predictions = fs::read_to_string(a.path().join("predictions.jsonl")).unwrap();
    assert_eq!(predictions.lines().count(), 20 * 3);
    let inferences = fs::read_to_string(a.path().join("inferences.jsonl")).unwrap();
    assert_eq!(inferences.lines().count(), 20 * 170);
    let selection = fs::read_to_string(a.path().join("selection.jsonl")).unwrap();
    assert_eq!(selection.lines().count(), 20 * 5);
}

#[test]
fn phase2_on_untrained_model_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gdk(dir.path(), &["init-model", "--output", "fresh"])
        .status
        .success());
    let out = gdk(
        dir.path(),
        &[
            "train-phase2",
            "--model",
            "fresh",
            "--triples",
            &path(&fixture("toy/triples.tsv")),
            "--output",
            "p2",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("phase ordering"));
    assert!(!dir.path().join("p2").exists());
}

#[test]
fn invalid_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let assertions = path(&fixture("toy/assertions.jsonl"));
    let out = gdk(
        dir.path(),
        &[
            "filter",
            "--input",
            &assertions,
            "--output",
            "f.jsonl",
            "--threshold",
            "1.5",
        ],
    );
    assert_eq!(out.status.code(), Some(2));

    // build-noise only accepts filtered corpora that carry a manifest
    let out = gdk(
        dir.path(),
        &["build-noise", "--input", &assertions, "--output", "n.jsonl"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest"));

    let out = gdk(
        dir.path(),
        &["filter", "--input", "missing.jsonl", "--output", "f.jsonl"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tampered_artifact_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let assertions = path(&fixture("toy/assertions.jsonl"));
    assert!(gdk(
        dir.path(),
        &["filter", "--input", &assertions, "--output", "f.jsonl"]
    )
    .status
    .success());
    let mut text = fs::read_to_string(dir.path().join("f.jsonl")).unwrap();
    text.push('\n');
    fs::write(dir.path().join("f.jsonl"), text).unwrap();
    let out = gdk(
        dir.path(),
        &["build-noise", "--input", "f.jsonl", "--output", "n.jsonl"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_lists_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let out = gdk(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let help = String::from_utf8_lossy(&out.stdout);
    for cmd in [
        "filter",
        "build-noise",
        "train-phase1",
        "train-phase2",
        "generate",
        "select",
        "eval-intrinsic",
        "eval-extrinsic",
        "report",
    ] {
        assert!(help.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn freeform_needs_phase1_only_model() {
    let dir = tempfile::tempdir().unwrap();
    let assertions = path(&fixture("toy/assertions.jsonl"));
    let triples = path(&fixture("toy/triples.tsv"));
    for args in [
        vec!["filter", "--input", &assertions, "--output", "f.jsonl"],
        vec!["build-noise", "--input", "f.jsonl", "--output", "n.jsonl"],
        vec!["train-phase1", "--input", "n.jsonl", "--output", "p1"],
        vec![
            "train-phase2",
            "--model",
            "p1",
            "--triples",
            &triples,
            "--output",
            "p2",
        ],
    ] {
        assert!(gdk(dir.path(), &args).status.success(), "{args:?}");
    }
    let ctx = [
        "--context",
        "PersonX eats injera in Ethiopia",
        "--country",
        "Ethiopia",
    ];
    let mut args = vec![
        "generate",
        "--model",
        "p1",
        "--freeform",
        "--output",
        "free.jsonl",
    ];
    args.extend(ctx);
    assert!(gdk(dir.path(), &args).status.success());
    let free = fs::read_to_string(dir.path().join("free.jsonl")).unwrap();
    assert_eq!(free.lines().count(), 5);
    assert!(free.lines().all(|l| l.contains("\"relation\":null")));

    let mut args = vec![
        "generate",
        "--model",
        "p2",
        "--freeform",
        "--output",
        "bad.jsonl",
    ];
    args.extend(ctx);
    let out = gdk(dir.path(), &args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ablation requires phase-1 model"));
}

#[test]
fn seed_results_report() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = path(&fixture("table5_seeds.csv"));
    let out = gdk(
        dir.path(),
        &[
            "eval-extrinsic",
            "--seed-results",
            &seeds,
            "--output",
            "ext.json",
            "--text",
            "ext.txt",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let seed_table = fs::read_to_string(dir.path().join("ext.txt")).unwrap();
    assert!(
        seed_table.contains("GD-COMET (average)    63.51"),
        "{seed_table}"
    );
    assert!(
        seed_table.contains("COMET (average)       59.59"),
        "{seed_table}"
    );

    let out = gdk(
        dir.path(),
        &[
            "report",
            "--extrinsic",
            "ext.json",
            "--output",
            "report.txt",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    let first_row = report.lines().find(|l| l.starts_with("GD-VCR")).unwrap();
    assert!(first_row.ends_with("**63.51**"), "{first_row}");
    assert!(dir.path().join("report.txt.manifest.json").exists());
}
