// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::HashMap;
use std::fs;

use analogy_probe::dataset::{io, AnalogyInstance, Label, StoryInstance};
use analogy_probe::experiment::{execute, load_config, run, Overrides};
use analogy_probe::interventions::{patch_grid_sweep, swap_first_pairs, GridOptions};
use analogy_probe::model::{save_model_dir, Model};
use analogy_probe::toy;
use serde_json::{json, Value};

#[test]
fn model_dir_round_trip_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let config = toy::small_config();
    let archive = toy::random_archive(&config, 5);
    save_model_dir(tmp.path(), &config, &archive, &toy::demo_vocab()).unwrap();
    let loaded = Model::load_dir(tmp.path()).unwrap();
    let direct = toy::random_model(&config, 5);
    let ids: Vec<u32> = (0..12).map(|i| (i * 7) % loaded.vocab().len() as u32).collect();
    assert_eq!(
        loaded.forward_ids(&ids, None).unwrap(),
        direct.forward_ids(&ids, None).unwrap()
    );
}

#[test]
fn swap_donors_are_uniform_within_relation() {
    let all = toy::sample_analogies();
    let rel = "capital_of";
    let mut pool: Vec<AnalogyInstance> = all.iter().filter(|i| i.relation_id == rel).cloned().collect();
    let donors: Vec<AnalogyInstance> = pool.drain(..5).collect();
    let target = &pool[0];
    let incorrect = vec![target.clone(); 5000];
    let swapped = swap_first_pairs(&incorrect, &donors, 17).unwrap();

    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in &swapped {
        assert_eq!((s.e3.as_str(), s.e4.as_str()), (target.e3.as_str(), target.e4.as_str()));
        let donor = s.id.rsplit('+').next().unwrap();
        *counts.entry(donor).or_default() += 1;
    }
    assert_eq!(counts.len(), 5);
    let expected = 1000.0;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 4 degrees of freedom, p = 0.001
    assert!(chi2 < 18.47, "chi-square {chi2} over {counts:?}");
    // other relations' instances never donate
    let other: Vec<_> = all.iter().filter(|i| i.relation_id != rel).take(1).cloned().collect();
    assert!(swap_first_pairs(&other, &donors, 0).is_err());
}

#[test]
fn fixture_patch_grid_finds_the_fixing_cell() {
    let fx = toy::patch_grid_fixture();
    let report = patch_grid_sweep(&fx.model, &fx.instances, &GridOptions::default()).unwrap();
    assert_eq!(report.best_cell, Some(fx.fixing_cell));
    assert_eq!(report.best_gain, 1.0);
    let total: f64 = report.gains.iter().flatten().sum();
    assert_eq!(total, 1.0, "only one cell corrects");
}

fn demo_config(ws: &toy::DemoWorkspace, kind: &str) -> std::path::PathBuf {
    ws.configs.iter().find(|(k, _)| k.as_str() == kind).unwrap().1.clone()
}

#[test]
fn execute_matches_written_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = toy::write_demo(tmp.path()).unwrap();
    let path = demo_config(&ws, "mas");
    let cfg = load_config(&path, &Overrides::default()).unwrap();
    let in_memory = execute(&cfg).unwrap();
    let manifest = run(&path, &Overrides::default()).unwrap();
    assert_eq!(
        in_memory.keys().collect::<Vec<_>>(),
        manifest.outputs.keys().collect::<Vec<_>>()
    );
    for (name, bytes) in &in_memory {
        assert_eq!(&fs::read(cfg.output_dir().join(name)).unwrap(), bytes, "{name}");
    }
}

#[test]
fn knockout_csv_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = toy::write_demo(tmp.path()).unwrap();
    let cfg = load_config(&demo_config(&ws, "knockout"), &Overrides::default()).unwrap();
    let out = execute(&cfg).unwrap();
    for label in ["correct", "incorrect"] {
        let text = String::from_utf8(out[&format!("knockout_{label}.csv")].clone()).unwrap();
        let rows: Vec<&str> = text.lines().map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(rows, ["position", "baseline", "e1", "e2", "link", "e3"]);
        assert!(text.starts_with("position,0,1,2,3\n"));
    }
}

#[test]
fn build_then_filter_then_story_labels_feed_mas() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = toy::write_demo(tmp.path()).unwrap();

    // build-dataset yields a balanced sample that filter accepts as input
    let build = run(&demo_config(&ws, "build-dataset"), &Overrides::default()).unwrap();
    assert!(build.outputs.contains_key("analogies.jsonl"));
    let built = io::read_analogies(&tmp.path().join("out/build-dataset/analogies.jsonl")).unwrap();
    let correct = built.iter().filter(|i| i.label == Label::Correct).count();
    assert_eq!((correct, built.len()), (4, 8));

    let filter_cfg = json!({
        "analysis": "filter",
        "output_dir": "../out/refilter",
        "seed": 3,
        "datasets": {"analogies": "../out/build-dataset/analogies.jsonl", "oracle_script": "../data/oracle.json"},
    });
    let path = tmp.path().join("configs/refilter.json");
    fs::write(&path, serde_json::to_vec(&filter_cfg).unwrap()).unwrap();
    run(&path, &Overrides::default()).unwrap();
    let summary: Value =
        serde_json::from_slice(&fs::read(tmp.path().join("out/refilter/filter_summary.json")).unwrap()).unwrap();
    // built instances already passed both filters
    assert_eq!(summary["n_kept"], 8);

    // story-eval labels drive the MAS label split
    run(&demo_config(&ws, "story-eval"), &Overrides::default()).unwrap();
    let labeled: Vec<StoryInstance> =
        io::read_stories(&tmp.path().join("out/story-eval/stories_labeled.jsonl")).unwrap();
    assert!(labeled.iter().all(|s| s.label != Label::Unlabeled));
    let mas_cfg = json!({
        "analysis": "mas",
        "output_dir": "../out/mas-chained",
        "seed": 3,
        "model_dir": "../model",
        "datasets": {"stories": "../out/story-eval/stories_labeled.jsonl"},
    });
    let path = tmp.path().join("configs/mas-chained.json");
    fs::write(&path, serde_json::to_vec(&mas_cfg).unwrap()).unwrap();
    run(&path, &Overrides::default()).unwrap();
    let csv = fs::read_to_string(tmp.path().join("out/mas-chained/mas_relative.csv")).unwrap();
    assert!(csv.starts_with("layer,label,mean_relative\n"));
    // one curve per label over L + 1 residual layers
    assert_eq!(csv.lines().count(), 1 + 2 * 5);
}
