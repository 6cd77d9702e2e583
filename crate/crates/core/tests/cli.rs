// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use analogy_probe::dataset::{io, Label};
use analogy_probe::experiment::{self, Overrides, RunError, LOCK_FILE, MANIFEST_FILE};
use analogy_probe::toy;
use serde_json::{json, Value};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_analogy-probe"))
        .args(args)
        .env_remove("ANALOGY_PROBE_WORKERS")
        .output()
        .expect("binary runs")
}

fn demo() -> (tempfile::TempDir, toy::DemoWorkspace) {
    let tmp = tempfile::tempdir().unwrap();
    let ws = toy::write_demo(tmp.path()).unwrap();
    (tmp, ws)
}

fn write_config(dir: &Path, name: &str, value: &Value) -> String {
    let path = dir.join("configs").join(name);
    fs::write(&path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn demo_configs_validate() {
    let (_tmp, ws) = demo();
    for (kind, path) in &ws.configs {
        let out = cli(&["validate", path.to_str().unwrap()]);
        assert!(out.status.success(), "{kind}: {}", stderr(&out));
    }
}

#[test]
fn validate_reports_field_paths() {
    let (tmp, _ws) = demo();
    let bad = json!({
        "analysis": "knockout",
        "output_dir": "../out/x",
        "seed": -3,
        "colour": "blue",
        "model_dir": "../nowhere",
        "datasets": {"analogies": "../data/missing.jsonl", "extra": "x"},
        "params": {"positions": ["e9"]}
    });
    let path = write_config(tmp.path(), "bad.json", &bad);
    let out = cli(&["validate", &path]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    for needle in [
        "colour: unknown field",
        "seed: must be non-negative",
        "datasets.extra: unknown dataset",
    ] {
        assert!(err.contains(needle), "missing {needle:?} in\n{err}");
    }
}

#[test]
fn validate_checks_semantics() {
    let (tmp, _ws) = demo();
    let cfg = json!({
        "analysis": "knockout",
        "output_dir": "../out/x",
        "seed": 1,
        "model_dir": "../nowhere",
        "datasets": {"analogies": "../data/missing.jsonl"},
    });
    let err = stderr(&cli(&["validate", &write_config(tmp.path(), "sem.json", &cfg)]));
    assert!(err.contains("model_dir:"), "{err}");
    assert!(
        err.contains("datasets.analogies:") && err.contains("does not exist"),
        "{err}"
    );

    let cfg = json!({
        "analysis": "patchscope-sweep",
        "output_dir": "../out/x",
        "seed": 1,
        "model_dir": "../model",
        "datasets": {"analogies": "../data/analogies.jsonl"},
        "params": {"position": "e2", "info": "attributive"}
    });
    let err = stderr(&cli(&["validate", &write_config(tmp.path(), "attr.json", &cfg)]));
    assert!(err.contains("related_entities"), "{err}");
}

#[test]
fn validate_names_bad_records() {
    let (tmp, _ws) = demo();
    let mut recs: Vec<Value> = io::read_analogies(&tmp.path().join("data/analogies.jsonl"))
        .unwrap()
        .iter()
        .map(|i| serde_json::to_value(i).unwrap())
        .collect();
    let id = recs[1]["id"].as_str().unwrap().to_string();
    recs[1].as_object_mut().unwrap().remove("e2");
    let text: String = recs.iter().map(|r| format!("{r}\n")).collect();
    fs::write(tmp.path().join("data/broken.jsonl"), text).unwrap();
    let cfg = json!({
        "analysis": "knockout",
        "output_dir": "../out/x",
        "seed": 1,
        "model_dir": "../model",
        "datasets": {"analogies": "../data/broken.jsonl"},
    });
    let out = cli(&["validate", &write_config(tmp.path(), "rec.json", &cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(
        err.contains(&format!("\"{id}\"")) && err.contains("missing field \"e2\""),
        "{err}"
    );
}

#[test]
fn run_config_error_exits_2_without_output() {
    let (tmp, _ws) = demo();
    let cfg = json!({"analysis": "no-such-thing", "output_dir": "../out/none", "seed": 0});
    let out = cli(&["run", &write_config(tmp.path(), "x.json", &cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("analysis:"));
    assert!(!tmp.path().join("out/none").exists());
}

#[test]
fn analysis_error_exits_1() {
    let (tmp, _ws) = demo();
    // every instance incorrect, so swap-pairs has no donors
    let mut all = io::read_analogies(&tmp.path().join("data/analogies.jsonl")).unwrap();
    for i in &mut all {
        i.label = Label::Incorrect;
    }
    fs::write(tmp.path().join("data/all_wrong.jsonl"), io::to_jsonl(&all).unwrap()).unwrap();
    let cfg = json!({
        "analysis": "swap-pairs",
        "output_dir": "../out/swap-fail",
        "seed": 0,
        "model_dir": "../model",
        "datasets": {"analogies": "../data/all_wrong.jsonl"},
    });
    let out = cli(&["run", &write_config(tmp.path(), "swapfail.json", &cfg)]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("no correct donor"));
    assert!(
        !tmp.path().join("out/swap-fail").join(LOCK_FILE).exists(),
        "lock left behind"
    );
}

#[test]
fn overrides_change_seed_and_destination() {
    let (tmp, ws) = demo();
    let (_, probe) = ws.configs.iter().find(|(k, _)| k.as_str() == "probe").unwrap();
    let dest = tmp.path().join("elsewhere");
    let out = cli(&[
        "run",
        probe.to_str().unwrap(),
        "--seed",
        "99",
        "--output-dir",
        dest.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest: Value = serde_json::from_slice(&fs::read(dest.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 99);
    let summary: Value = serde_json::from_slice(&fs::read(dest.join("probe_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["result"]["seed"], 99);
    assert!(!tmp.path().join("out/probe").exists());
}

#[test]
fn stdout_lists_checksums() {
    let (_tmp, ws) = demo();
    let (_, cfg) = ws.configs.iter().find(|(k, _)| k.as_str() == "story-eval").unwrap();
    let out = cli(&["run", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let names: Vec<&str> = text.lines().map(|l| l.split_whitespace().nth(1).unwrap()).collect();
    assert_eq!(
        names,
        ["stories_labeled.jsonl", "story_summary.json", "story_verdicts.jsonl"]
    );
    assert!(text.lines().all(|l| l.split_whitespace().next().unwrap().len() == 64));
}

#[test]
fn held_lock_refuses_second_run() {
    let (tmp, ws) = demo();
    let (_, cfg) = ws.configs.iter().find(|(k, _)| k.as_str() == "filter").unwrap();
    let out_dir = tmp.path().join("out/filter");
    fs::create_dir_all(&out_dir).unwrap();
    fs::write(out_dir.join(LOCK_FILE), "1\n").unwrap();
    let err = experiment::run(cfg, &Overrides::default()).unwrap_err();
    assert!(matches!(err, RunError::Analysis(_)), "{err}");
    assert!(!out_dir.join(MANIFEST_FILE).exists());
}

#[test]
fn bad_worker_count_is_rejected() {
    let (_tmp, ws) = demo();
    let (_, cfg) = &ws.configs[0];
    let out = Command::new(env!("CARGO_BIN_EXE_analogy-probe"))
        .args(["validate", cfg.to_str().unwrap()])
        .env("ANALOGY_PROBE_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("ANALOGY_PROBE_WORKERS"));
}

#[test]
fn worker_count_does_not_change_outputs() {
    let (tmp, ws) = demo();
    let (_, cfg) = ws.configs.iter().find(|(k, _)| k.as_str() == "knockout").unwrap();
    let mut manifests = Vec::new();
    for workers in ["1", "3"] {
        let dest = tmp.path().join(format!("w{workers}"));
        let out = Command::new(env!("CARGO_BIN_EXE_analogy-probe"))
            .args(["run", cfg.to_str().unwrap(), "--output-dir", dest.to_str().unwrap()])
            .env("ANALOGY_PROBE_WORKERS", workers)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        manifests.push(String::from_utf8(out.stdout).unwrap());
    }
    assert_eq!(manifests[0], manifests[1]);
}
