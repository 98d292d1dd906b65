use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use huesearch_core::search::save_records;
use huesearch_core::PersonRecord;

fn huesearch(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_huesearch"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_truth(path: &Path, records: &[PersonRecord]) {
    let mut text = String::from("identity,class,label\n");
    for r in records {
        for (class, label) in &r.parts {
            text.push_str(&format!("{},{class},{label}\n", r.id));
        }
    }
    fs::write(path, text).unwrap();
}

fn ten_regions() -> (Vec<PersonRecord>, Vec<PersonRecord>) {
    let truth: Vec<PersonRecord> = (0..5)
        .map(|i| PersonRecord::labels_only(format!("p{i}"), [("upper", "red"), ("lower", "blue")]))
        .collect();
    let mut pred = truth.clone();
    pred[0].parts.insert("upper".into(), "green".into());
    pred[1].parts.insert("lower".into(), "black".into());
    pred[2].parts.remove("lower");
    (truth, pred)
}

#[test]
fn missing_inputs_and_bad_config_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = huesearch(dir.path(), &["prepare"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("paths.survey"));

    assert_eq!(code(&huesearch(dir.path(), &["--set", "survey.tau=2", "train"])), 1);
    assert_eq!(code(&huesearch(dir.path(), &["--set", "no_such_key=1", "train"])), 1);
    assert_eq!(code(&huesearch(dir.path(), &["--config", "absent.toml", "train"])), 1);
    assert_eq!(code(&huesearch(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&huesearch(dir.path(), &["--help"])), 0);
}

#[test]
fn missing_or_broken_data_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = huesearch(dir.path(), &["train"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("huesearch prepare"));

    fs::write(dir.path().join("records.jsonl"), "{not json\n").unwrap();
    assert_eq!(code(&huesearch(dir.path(), &["search", "upper=red", "--records", "records.jsonl"])), 2);

    fs::write(dir.path().join("survey.csv"), "r,g,b,label\n").unwrap();
    assert_eq!(code(&huesearch(dir.path(), &["prepare", "--survey", "survey.csv"])), 2);
}

#[test]
fn search_prints_matching_ids() {
    let dir = tempfile::tempdir().unwrap();
    let db = [
        PersonRecord::labels_only("A", [("upper", "red"), ("lower", "blue")]),
        PersonRecord::labels_only("B", [("upper", "red"), ("lower", "black")]),
    ];
    save_records(&db, &dir.path().join("db.jsonl")).unwrap();
    let run = |q: &str| huesearch(dir.path(), &["search", q, "--records", "db.jsonl"]);

    let out = run("upper=red lower=blue");
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out), "[A]\n");
    assert_eq!(stdout(&run("upper=red")), "[A, B]\n");
    assert_eq!(stdout(&run("lower=black upper=blue")), "[]\n");
    // Unknown vocabulary and malformed text are usage errors.
    assert_eq!(code(&run("hat=red")), 1);
    assert_eq!(code(&run("upper")), 1);
}

#[test]
fn evaluate_reports_ras_and_recall() {
    let dir = tempfile::tempdir().unwrap();
    let (truth, pred) = ten_regions();
    write_truth(&dir.path().join("truth.csv"), &truth);
    save_records(&pred, &dir.path().join("pred.jsonl")).unwrap();
    save_records(&truth, &dir.path().join("perfect.jsonl")).unwrap();

    let out = huesearch(
        dir.path(),
        &["evaluate", "--records", "pred.jsonl", "--truth", "truth.csv", "--confusion", "confusion.csv"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("RAS       77.8"), "{text}");
    assert!(text.contains("recall    70.0"), "{text}");
    assert!(fs::read_to_string(dir.path().join("confusion.csv")).unwrap().starts_with("truth,"));

    let out = huesearch(dir.path(), &["evaluate", "--records", "perfect.jsonl", "--truth", "truth.csv", "--json"]);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["ras"], 1.0);
    assert_eq!(json["recall"], 1.0);
}

/// Every file the pipeline writes, keyed by its path under the work dir.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let key = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((key, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn synthetic_end_to_end_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let ok = |args: &[&str]| {
        let out = huesearch(root, args);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        stdout(&out)
    };
    ok(&["synth", "--out", "demo", "--identities", "12", "--survey-size", "200000"]);
    let config = "demo/huesearch.toml";

    let summary = ok(&["-c", config, "prepare"]);
    assert!(summary.lines().any(|l| l.starts_with("restricted")), "{summary}");
    ok(&["-c", config, "train"]);
    ok(&["-c", config, "label", "--sigma", "10", "--pooling", "satsort"]);
    let report = ok(&["-c", config, "evaluate", "--json"]);
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert!(report["ras"].as_f64().unwrap() > 0.3, "{report}");
    let found = ok(&["-c", config, "search", "upper=black"]);
    assert!(found.starts_with('[') && found.ends_with("]\n"));

    let metrics: serde_json::Value =
        serde_json::from_slice(&fs::read(root.join("demo/work/train_metrics.json")).unwrap()).unwrap();
    assert!(metrics["holdout_accuracy"].as_f64().unwrap() > 0.9, "{metrics}");
    let dot = ok(&["-c", config, "export-tree", "--format", "dot"]);
    assert!(dot.starts_with("digraph"));

    let first = snapshot(&root.join("demo/work"));
    assert!(first.iter().any(|(k, _)| k == "stages/restricted.csv"));
    ok(&["-c", config, "prepare"]);
    ok(&["-c", config, "train"]);
    ok(&["-c", config, "label", "--sigma", "10", "--pooling", "satsort"]);
    assert_eq!(snapshot(&root.join("demo/work")), first);

    // Skipping a stage removes its stale file.
    ok(&["-c", config, "prepare", "--no-smote"]);
    assert!(!root.join("demo/work/stages/resampled.csv").exists());

    // Appending keeps earlier records.
    let before = fs::read_to_string(root.join("demo/work/records.jsonl")).unwrap().lines().count();
    ok(&["-c", config, "label", "--append"]);
    let after = fs::read_to_string(root.join("demo/work/records.jsonl")).unwrap().lines().count();
    assert_eq!(after, 2 * before);
}

#[test]
fn tune_writes_a_config_snippet() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let run = |args: &[&str]| {
        let out = huesearch(root, args);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["synth", "--out", "demo", "--identities", "8"]);
    let small_grid = [
        "--set",
        "tune.contrast=[1.0, 1.3]",
        "--set",
        "tune.brightness=[0.0]",
        "--set",
        "tune.saturation=[1.0, 1.5]",
    ];
    for cmd in ["prepare", "train", "tune"] {
        run(&[&["-c", "demo/huesearch.toml"][..], &small_grid, &[cmd]].concat());
    }
    let snippet = fs::read_to_string(root.join("demo/work/enhancement.toml")).unwrap();
    let table: toml::Table = snippet.parse().unwrap();
    assert_eq!(table["preprocess"]["mode"].as_str(), Some("learned"));
    let scores = fs::read_to_string(root.join("demo/work/tune_scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 1 + 4);
}
