// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::config::{
    load_config, parse_params, AnalysisKind, BuildParams, Candidate, Diagnostic, FilterParams, KnockoutParams,
    LoadedConfig, MasParams, Overrides, PatchGridParams, PatchscopeParams, StoryEvalParams, SwapParams,
};
use super::manifest::{sha256_hex, write_atomic, OutputLock, RunManifest, MANIFEST_FILE};
use crate::alignment::{relative_mas_aggregate, story_heatmap};
use crate::dataset::{
    generate_analogies, io, knowledge_filter, label_instances, sample_split, shortcut_filter, story_eval,
    AnalogyInstance, EngineOracle, Label, ModelOracle, ScriptedOracle, StoryInstance,
};
use crate::error::{Error, Result};
use crate::interventions::{
    knockout_sweep, patch_grid_sweep, restrict_to_relations, swap_first_pairs, window_size, GridOptions, SweepOptions,
};
use crate::model::Model;
use crate::patchscopes::{layer_sweep_decode, PatchscopeOptions, ReferenceScorer, RelatedEntities};
use crate::probing::{pairs_from_stories, probe_grid, ProbeHyperparams};
use crate::report;
use crate::text::generation_matches;

/// Output file name → bytes, in name order.
pub type Outputs = BTreeMap<String, Vec<u8>>;

#[derive(Debug)]
pub enum RunError {
    /// The config did not validate; nothing was written.
    Config(Vec<Diagnostic>),
    Analysis(Error),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(diags) => {
                writeln!(f, "invalid config:")?;
                for d in diags {
                    writeln!(f, "  {d}")?;
                }
                Ok(())
            }
            RunError::Analysis(e) => write!(f, "analysis failed: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Analysis(e)
    }
}

/// Validate, execute, then write outputs and the manifest.
pub fn run(config_path: &Path, overrides: &Overrides) -> std::result::Result<RunManifest, RunError> {
    let started = Instant::now();
    let cfg = load_config(config_path, overrides).map_err(RunError::Config)?;
    let out_dir = cfg.output_dir();
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let _lock = OutputLock::acquire(&out_dir)?;

    let outputs = execute(&cfg)?;
    let mut checksums = BTreeMap::new();
    for (name, bytes) in &outputs {
        write_atomic(&out_dir.join(name), bytes)?;
        checksums.insert(name.clone(), sha256_hex(bytes));
    }
    let config_bytes = serde_json::to_vec(&cfg.config).map_err(Error::from)?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        analysis: cfg.config.analysis.to_string(),
        seed: cfg.config.seed,
        config_sha256: sha256_hex(&config_bytes),
        outputs: checksums,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(Error::from)?;
    bytes.push(b'\n');
    write_atomic(&out_dir.join(MANIFEST_FILE), &bytes)?;
    Ok(manifest)
}

fn config_error(d: Diagnostic) -> Error {
    Error::Config(d.to_string())
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn required(cfg: &LoadedConfig, name: &str) -> Result<std::path::PathBuf> {
    cfg.dataset(name)
        .ok_or_else(|| Error::Config(format!("datasets.{name} is required")))
}

fn load_model(cfg: &LoadedConfig) -> Result<Model> {
    let dir = cfg
        .model_dir()
        .ok_or_else(|| Error::Config("model_dir is required".into()))?;
    Model::load_dir(&dir)
}

/// Scripted oracle when configured, otherwise the engine.
fn oracle<'a>(cfg: &LoadedConfig, model: Option<&'a Model>, max_new: usize) -> Result<Box<dyn ModelOracle + 'a>> {
    if let Some(path) = cfg.dataset("oracle_script") {
        return Ok(Box::new(ScriptedOracle::load(&path)?));
    }
    let model = model.ok_or_else(|| Error::Config("model_dir or datasets.oracle_script is required".into()))?;
    Ok(Box::new(EngineOracle::new(model, max_new)))
}

fn optional_model(cfg: &LoadedConfig) -> Result<Option<Model>> {
    if cfg.dataset("oracle_script").is_some() {
        return Ok(None);
    }
    load_model(cfg).map(Some)
}

/// Run the configured analysis and return its outputs without writing.
pub fn execute(cfg: &LoadedConfig) -> Result<Outputs> {
    let c = &cfg.config;
    let seed = c.seed;
    let mut out = Outputs::new();
    match c.analysis {
        AnalysisKind::Knockout => {
            let p: KnockoutParams = parse_params(&c.params).map_err(config_error)?;
            let model = load_model(cfg)?;
            let instances = io::read_analogies(&required(cfg, "analogies")?)?;
            let reports = knockout_sweep(&model, &instances, &p.positions, &SweepOptions { max_new: p.max_new })?;
            let mut groups = Vec::new();
            for r in &reports {
                out.insert(format!("knockout_{}.csv", r.label), r.to_csv()?);
                groups.push(json!({"label": r.label, "n_instances": r.n_instances}));
            }
            out.insert(
                "knockout_summary.json".into(),
                json_bytes(&json!({
                    "analysis": c.analysis,
                    "seed": seed,
                    "n_layers": model.n_layers(),
                    "window_size": window_size(model.n_layers()),
                    "positions": p.positions,
                    "groups": groups,
                }))?,
            );
        }
        AnalysisKind::PatchscopeSweep => {
            let p: PatchscopeParams = parse_params(&c.params).map_err(config_error)?;
            let model = load_model(cfg)?;
            let instances = io::read_analogies(&required(cfg, "analogies")?)?;
            let related = match cfg.dataset("related_entities") {
                Some(path) => RelatedEntities::load(&path)?,
                None => RelatedEntities::default(),
            };
            let scorer = ReferenceScorer { related: &related };
            let opts = PatchscopeOptions {
                max_new: p.max_new,
                target_layer: p.target_layer,
            };
            let curves = layer_sweep_decode(&model, &instances, p.position, p.info, &scorer, &opts)?;
            out.insert("patchscope_curves.csv".into(), curves.to_csv()?);
            let groups: Vec<_> = curves
                .curves
                .iter()
                .map(|c| json!({"label": c.label, "n_instances": c.n_instances}))
                .collect();
            out.insert(
                "patchscope_summary.json".into(),
                json_bytes(&json!({
                    "analysis": c.analysis,
                    "seed": seed,
                    "position": p.position,
                    "info": p.info,
                    "max_new": p.max_new,
                    "target_layer": p.target_layer,
                    "no_data": curves.no_data(),
                    "groups": groups,
                }))?,
            );
        }
        AnalysisKind::PatchGrid => {
            let p: PatchGridParams = parse_params(&c.params).map_err(config_error)?;
            let model = load_model(cfg)?;
            // Only wrongly answered instances can be corrected.
            let instances: Vec<AnalogyInstance> = io::read_analogies(&required(cfg, "analogies")?)?
                .into_iter()
                .filter(|i| i.label != Label::Correct)
                .collect();
            let opts = GridOptions {
                max_new: p.max_new,
                source: p.source,
                target: p.target,
            };
            let report = patch_grid_sweep(&model, &instances, &opts)?;
            out.insert("patch_grid.csv".into(), report.to_csv()?);
            out.insert(
                "patch_grid_summary.json".into(),
                json_bytes(&json!({
                    "analysis": c.analysis,
                    "seed": seed,
                    "source": p.source,
                    "target": p.target,
                    "n_instances": report.n_instances,
                    "best_cell": report.best_cell,
                    "gain": report.best_gain,
                }))?,
            );
        }
        AnalysisKind::SwapPairs => {
            let p: SwapParams = parse_params(&c.params).map_err(config_error)?;
            let model = load_model(cfg)?;
            let all = io::read_analogies(&required(cfg, "analogies")?)?;
            let surfaces: Vec<&str> = p.relations.iter().map(String::as_str).collect();
            let kept = restrict_to_relations(&all, &surfaces);
            let engine = EngineOracle::new(&model, p.max_new);
            let (labeled, unlabeled): (Vec<_>, Vec<_>) = kept.into_iter().partition(|i| i.label != Label::Unlabeled);
            let mut instances = labeled;
            instances.extend(label_instances(&engine, &unlabeled)?);
            let correct: Vec<_> = instances
                .iter()
                .filter(|i| i.label == Label::Correct)
                .cloned()
                .collect();
            let incorrect: Vec<_> = instances
                .iter()
                .filter(|i| i.label == Label::Incorrect)
                .cloned()
                .collect();
            let swapped = swap_first_pairs(&incorrect, &correct, seed)?;
            let evaluated: Vec<AnalogyInstance> = swapped
                .par_iter()
                .map(|inst| {
                    let gen = model.generate(&inst.prompt, p.max_new, None)?;
                    let mut inst = inst.clone();
                    inst.label = if generation_matches(&gen.text, &inst.e4) {
                        Label::Correct
                    } else {
                        Label::Incorrect
                    };
                    Ok(inst)
                })
                .collect::<Result<_>>()?;
            let corrected = evaluated.iter().filter(|i| i.label == Label::Correct).count();
            let gain = if evaluated.is_empty() {
                0.0
            } else {
                corrected as f64 / evaluated.len() as f64
            };
            out.insert("swapped.jsonl".into(), io::to_jsonl(&evaluated)?);
            out.insert(
                "swap_summary.json".into(),
                json_bytes(&json!({
                    "analysis": c.analysis,
                    "seed": seed,
                    "relations": p.relations,
                    "n_incorrect": incorrect.len(),
                    "n_donors": correct.len(),
                    "n_corrected": corrected,
                    "gain": gain,
                }))?,
            );
        }
        AnalysisKind::Probe => {
            let hp: ProbeHyperparams = parse_params(&c.params).map_err(config_error)?;
            let model = load_model(cfg)?;
            let stories = io::read_stories(&required(cfg, "stories")?)?;
            let pairs = pairs_from_stories(&stories);
            let result = probe_grid(&model, &pairs, &hp, seed)?;
            out.insert("probe_accuracy.csv".into(), result.to_csv()?);
            out.insert(
                "probe_summary.json".into(),
                json_bytes(&json!({
                    "analysis": c.analysis,
                    "n_pairs": pairs.len(),
                    "result": result,
                }))?,
            );
        }
        AnalysisKind::Mas => {
            let p: MasParams = parse_params(&c.params).map_err(config_error)?;
            let model = load_model(cfg)?;
            let stories = io::read_stories(&required(cfg, "stories")?)?;
            let (profiles, aggregate) = relative_mas_aggregate(&model, &stories)?;
            let mut rows = Vec::new();
            for r in &profiles {
                for l in 0..r.relative.len() {
                    rows.push(vec![
                        r.story_id.clone(),
                        l.to_string(),
                        report::fmt_value(r.mas_target[l]),
                        report::fmt_value(r.mas_distractor[l]),
                        report::fmt_value(r.relative[l]),
                    ]);
                }
            }
            out.insert(
                "mas_profiles.csv".into(),
                report::records_csv(
                    &["story_id", "layer", "mas_target", "mas_distractor", "relative"],
                    &rows,
                )?,
            );
            out.insert("mas_relative.csv".into(), aggregate.to_csv()?);
            for h in &p.heatmaps {
                let story = stories
                    .iter()
                    .find(|s| s.id == h.story)
                    .ok_or_else(|| Error::Dataset(format!("heatmap story {:?} not in dataset", h.story)))?;
                let (candidate, tag) = match h.candidate {
                    Candidate::Target => (&story.target, "target"),
                    Candidate::Distractor => (&story.distractor, "distractor"),
                };
                let map = story_heatmap(&model, &story.source, candidate, h.layer)?;
                let stem = format!("heatmap_{}_{tag}_layer{}", story.id, h.layer);
                out.insert(format!("{stem}.csv"), map.to_csv()?);
                out.insert(format!("{stem}_mask.csv"), map.mask_csv()?);
            }
            let groups: Vec<_> = aggregate
                .curves
                .iter()
                .map(|c| json!({"label": c.label, "n_instances": c.n_instances}))
                .collect();
            out.insert(
                "mas_summary.json".into(),
                json_bytes(&json!({
                    "analysis": c.analysis,
                    "seed": seed,
                    "n_stories": stories.len(),
                    "n_layers": model.n_layers(),
                    "groups": groups,
                }))?,
            );
        }
        AnalysisKind::BuildDataset => {
            let p: BuildParams = parse_params(&c.params).map_err(config_error)?;
            let model = optional_model(cfg)?;
            let oracle = oracle(cfg, model.as_ref(), p.max_new)?;
            let kb = io::read_kb(&required(cfg, "kb")?)?;
            let generated = generate_analogies(&kb)?;
            let mut kept = generated.clone();
            let mut n_after_knowledge = None;
            if p.filter {
                kept = keep_where(&kept, |i| knowledge_filter(oracle.as_ref(), i).map(|v| v.keep))?;
                n_after_knowledge = Some(kept.len());
                kept = keep_where(&kept, |i| shortcut_filter(oracle.as_ref(), i).map(|v| v.keep))?;
            }
            let n_filtered = kept.len();
            let mut labeled = label_instances(oracle.as_ref(), &kept)?;
            if let Some(n) = p.n_per_label {
                labeled = sample_split(&labeled, n, seed)?;
            }
            let count = |l: Label| labeled.iter().filter(|i| i.label == l).count();
            out.insert("analogies.jsonl".into(), io::to_jsonl(&labeled)?);
            out.insert(
                "build_summary.json".into(),
                json_bytes(&json!({
                    "analysis": c.analysis,
                    "seed": seed,
                    "n_records": kb.len(),
                    "n_generated": generated.len(),
                    "n_after_knowledge": n_after_knowledge,
                    "n_after_filters": n_filtered,
                    "n_correct": count(Label::Correct),
                    "n_incorrect": count(Label::Incorrect),
                    "n_per_label": p.n_per_label,
                }))?,
            );
        }
        AnalysisKind::Filter => {
            let p: FilterParams = parse_params(&c.params).map_err(config_error)?;
            let model = optional_model(cfg)?;
            let oracle = oracle(cfg, model.as_ref(), p.max_new)?;
            let instances = io::read_analogies(&required(cfg, "analogies")?)?;
            let verdicts: Vec<_> = instances
                .par_iter()
                .map(|inst| {
                    let k = knowledge_filter(oracle.as_ref(), inst)?;
                    let s = shortcut_filter(oracle.as_ref(), inst)?;
                    Ok((inst, k, s))
                })
                .collect::<Result<_>>()?;
            let report: Vec<_> = verdicts
                .iter()
                .map(|(inst, k, s)| {
                    json!({
                        "id": inst.id,
                        "keep": k.keep && s.keep,
                        "knowledge": k,
                        "shortcut": s,
                    })
                })
                .collect();
            let kept: Vec<AnalogyInstance> = verdicts
                .iter()
                .filter(|(_, k, s)| k.keep && s.keep)
                .map(|(i, _, _)| (*i).clone())
                .collect();
            let labeled = label_instances(oracle.as_ref(), &kept)?;
            out.insert("filtered.jsonl".into(), io::to_jsonl(&labeled)?);
            out.insert("filter_report.jsonl".into(), io::to_jsonl(&report)?);
            out.insert(
                "filter_summary.json".into(),
                json_bytes(&json!({
                    "analysis": c.analysis,
                    "seed": seed,
                    "n_instances": instances.len(),
                    "n_knowledge_kept": verdicts.iter().filter(|(_, k, _)| k.keep).count(),
                    "n_shortcut_kept": verdicts.iter().filter(|(_, _, s)| s.keep).count(),
                    "n_kept": labeled.len(),
                }))?,
            );
        }
        AnalysisKind::StoryEval => {
            let p: StoryEvalParams = parse_params(&c.params).map_err(config_error)?;
            let model = optional_model(cfg)?;
            let oracle = oracle(cfg, model.as_ref(), p.max_new)?;
            let stories = io::read_stories(&required(cfg, "stories")?)?;
            let verdicts: Vec<_> = stories
                .par_iter()
                .map(|s| story_eval(oracle.as_ref(), s, p.scheme))
                .collect::<Result<_>>()?;
            let labeled: Vec<StoryInstance> = stories
                .iter()
                .zip(&verdicts)
                .map(|(s, v)| StoryInstance {
                    label: if v.correct { Label::Correct } else { Label::Incorrect },
                    ..s.clone()
                })
                .collect();
            let n_correct = verdicts.iter().filter(|v| v.correct).count();
            out.insert("story_verdicts.jsonl".into(), io::to_jsonl(&verdicts)?);
            out.insert("stories_labeled.jsonl".into(), io::to_jsonl(&labeled)?);
            out.insert(
                "story_summary.json".into(),
                json_bytes(&json!({
                    "analysis": c.analysis,
                    "seed": seed,
                    "scheme": p.scheme,
                    "n_stories": stories.len(),
                    "n_correct": n_correct,
                    "n_incorrect": stories.len() - n_correct,
                    "n_unparseable": verdicts.iter().filter(|v| v.unparseable).count(),
                    "accuracy": if stories.is_empty() { 0.0 } else { n_correct as f64 / stories.len() as f64 },
                }))?,
            );
        }
    }
    Ok(out)
}

fn keep_where(
    instances: &[AnalogyInstance],
    pred: impl Fn(&AnalogyInstance) -> Result<bool> + Sync,
) -> Result<Vec<AnalogyInstance>> {
    let flags: Vec<bool> = instances.par_iter().map(&pred).collect::<Result<_>>()?;
    Ok(instances
        .iter()
        .zip(flags)
        .filter(|(_, keep)| *keep)
        .map(|(i, _)| i.clone())
        .collect())
}
