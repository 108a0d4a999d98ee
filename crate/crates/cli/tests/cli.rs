//! End-to-end tests of the `nmpo` binary: exit codes, stdout discipline,
//! determinism, and the file surfaces of every subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nmpo() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nmpo"))
}

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = nmpo();
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

fn write(path: &Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

/// Builds a small corpus plus a pipeline config, returning their paths.
fn setup(dir: &Path) -> (PathBuf, PathBuf) {
    let synth_cfg = dir.join("synth.json");
    write(
        &synth_cfg,
        r#"{"n_apps": 6, "levels_per_app": 4, "noise_sigma": 0.03, "seed": 21}"#,
    );
    let corpus = dir.join("corpus");
    let out = run(
        &[
            "synth",
            "--synth-config",
            synth_cfg.to_str().unwrap(),
            "--out",
            corpus.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "synth failed: {}", stderr(&out));

    let pipeline_cfg = dir.join("pipeline.json");
    write(
        &pipeline_cfg,
        r#"{"manifest": "corpus/manifest.json", "seed": 5, "cv_k": 4}"#,
    );
    (pipeline_cfg, corpus)
}

fn dir_digest(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut digest = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().to_string();
                digest.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    digest
}

#[test]
fn synth_same_seed_identical_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("synth.json");
    write(&cfg, r#"{"n_apps": 3, "levels_per_app": 2, "seed": 4}"#);
    for out_dir in ["a", "b"] {
        let out = run(
            &[
                "synth",
                "--synth-config",
                cfg.to_str().unwrap(),
                "--out",
                tmp.path().join(out_dir).to_str().unwrap(),
            ],
            &[],
        );
        assert_eq!(out.status.code(), Some(0));
    }
    assert_eq!(
        dir_digest(&tmp.path().join("a")),
        dir_digest(&tmp.path().join("b"))
    );

    // Re-running into an existing directory requires --force.
    let out = run(
        &[
            "synth",
            "--synth-config",
            cfg.to_str().unwrap(),
            "--out",
            tmp.path().join("a").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_predict_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, corpus) = setup(tmp.path());
    let model = tmp.path().join("model.json");

    let out = run(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
        ],
        &[("SOURCE_DATE_EPOCH", "1700000000")],
    );
    assert_eq!(out.status.code(), Some(0), "train failed: {}", stderr(&out));
    assert!(model.is_file());
    assert!(tmp.path().join("reports/train_report.json").is_file());
    assert!(tmp.path().join("reports/correlation.csv").is_file());

    let perf = corpus.join("perf/app03_l5_t16.csv");
    let out = run(
        &[
            "predict",
            "--model",
            model.to_str().unwrap(),
            "--perf",
            perf.to_str().unwrap(),
            "--spec",
            r#"{"app": "app03", "threads": 16, "dataset_level": 5}"#,
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "predict failed: {}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).expect("stdout is one JSON doc");
    for field in ["label", "probabilities", "predicted_ipc", "roofline_region", "model_hash"] {
        assert!(v.get(field).is_some(), "missing field {field}");
    }
    let p = &v["probabilities"];
    let sum = p["yes"].as_f64().unwrap() + p["maybe"].as_f64().unwrap() + p["no"].as_f64().unwrap();
    assert!((sum - 1.0).abs() < 1e-9);

    // Spec may arrive as a file path too.
    let spec_file = tmp.path().join("spec.json");
    write(&spec_file, r#"{"app": "app03", "threads": 16}"#);
    let out = run(
        &[
            "predict",
            "--model",
            model.to_str().unwrap(),
            "--perf",
            perf.to_str().unwrap(),
            "--spec",
            spec_file.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn seed_override_changes_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, _) = setup(tmp.path());
    let envs = [("SOURCE_DATE_EPOCH", "1700000000")];

    let paths: Vec<PathBuf> = (0..3)
        .map(|i| tmp.path().join(format!("model{i}.json")))
        .collect();
    for (i, (path, seed)) in paths.iter().zip(["5", "5", "6"]).enumerate() {
        let out = run(
            &[
                "train",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                path.to_str().unwrap(),
                "--seed",
                seed,
                "--reports",
                tmp.path().join(format!("reports{i}")).to_str().unwrap(),
                "--force",
            ],
            &envs,
        );
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    let a = std::fs::read(&paths[0]).unwrap();
    let b = std::fs::read(&paths[1]).unwrap();
    let c = std::fs::read(&paths[2]).unwrap();
    assert_eq!(a, b, "same seed + timestamp must reproduce the bundle");
    assert_ne!(a, c, "seed override must change the bundle");

    // Reports are deterministic too.
    let ra = std::fs::read(tmp.path().join("reports0/train_report.json")).unwrap();
    let rb = std::fs::read(tmp.path().join("reports1/train_report.json")).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn missing_manifest_is_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("pipeline.json");
    write(&cfg, r#"{"manifest": "nowhere/manifest.json"}"#);
    let out = run(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            tmp.path().join("m.json").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("manifest"), "{}", stderr(&out));
    assert!(!tmp.path().join("m.json").exists(), "no partial output");
}

#[test]
fn corrupted_bundle_is_version_error_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, corpus) = setup(tmp.path());
    let bad_model = tmp.path().join("bad.json");
    write(&bad_model, r#"{"format_version": 9, "oops": true}"#);
    let out = run(
        &[
            "predict",
            "--model",
            bad_model.to_str().unwrap(),
            "--perf",
            corpus.join("perf/app01_l1_t8.csv").to_str().unwrap(),
            "--spec",
            r#"{"app": "x", "threads": 8}"#,
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(stdout(&out).is_empty(), "no partial stdout on failure");

    write(&bad_model, "{ truncated");
    let out = run(
        &[
            "predict",
            "--model",
            bad_model.to_str().unwrap(),
            "--perf",
            corpus.join("perf/app01_l1_t8.csv").to_str().unwrap(),
            "--spec",
            r#"{"app": "x", "threads": 8}"#,
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn predict_schema_error_is_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, corpus) = setup(tmp.path());
    let model = tmp.path().join("model.json");
    let out = run(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(0));

    // A profile missing the floating-point events.
    let text = std::fs::read_to_string(corpus.join("perf/app01_l1_t8.csv")).unwrap();
    let stripped: String = text
        .lines()
        .filter(|l| !l.contains("fp_arith"))
        .map(|l| format!("{l}\n"))
        .collect();
    let bad_perf = tmp.path().join("bad.csv");
    write(&bad_perf, &stripped);
    let out = run(
        &[
            "predict",
            "--model",
            model.to_str().unwrap(),
            "--perf",
            bad_perf.to_str().unwrap(),
            "--spec",
            r#"{"app": "x", "threads": 8}"#,
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("fp_arith"), "{}", stderr(&out));
}

#[test]
fn report_and_correlate_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, _) = setup(tmp.path());

    // Without a model: tables only, no confusion matrix.
    let rpt = tmp.path().join("rpt");
    let out = run(
        &[
            "report",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            rpt.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(rpt.join("roofline.csv").is_file());
    assert!(rpt.join("edp_speedup.csv").is_file());
    assert!(!rpt.join("confusion.csv").exists());

    // Re-run without --force fails, with --force succeeds.
    let out = run(
        &[
            "report",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            rpt.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    let out = run(
        &[
            "report",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            rpt.to_str().unwrap(),
            "--force",
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(0));

    // Correlation export: 12 features -> 13 lines, 13 columns each.
    let corr = tmp.path().join("corr");
    let out = run(
        &[
            "correlate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            corr.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = std::fs::read_to_string(corr.join("correlation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 13);
    for line in &lines {
        assert_eq!(line.split(',').count(), 13);
    }
}

#[test]
fn help_lists_flags_and_bad_flags_are_usage_errors() {
    let out = run(&["--help"], &[]);
    assert_eq!(out.status.code(), Some(0));
    for sub in ["train", "predict", "correlate", "report", "synth"] {
        assert!(stdout(&out).contains(sub), "help must list {sub}");
    }

    let out = run(&["train", "--help"], &[]);
    assert_eq!(out.status.code(), Some(0));
    for flag in ["--config", "--out", "--seed", "--reports", "--force", "--quiet"] {
        assert!(stdout(&out).contains(flag), "train help must list {flag}");
    }

    let out = run(&["train", "--no-such-flag"], &[]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["frobnicate"], &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn thread_cap_env_is_honored() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, _) = setup(tmp.path());
    let model = tmp.path().join("model.json");
    let out = run(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
            "--quiet",
        ],
        &[("NMPO_THREADS", "1"), ("SOURCE_DATE_EPOCH", "1700000000")],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stderr(&out).is_empty(), "--quiet must silence notes");

    let out = run(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
        ],
        &[("NMPO_THREADS", "bogus")],
    );
    assert_eq!(out.status.code(), Some(1));
}
