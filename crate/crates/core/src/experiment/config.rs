// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{OptionScheme, SpanLabel};
use crate::interventions::{COMPARE_TOKENS, SWAP_RELATIONS};
use crate::model::{ARCHIVE_FILE, CONFIG_FILE, VOCAB_FILE};
use crate::patchscopes::{InfoKind, SourcePosition, DESCRIPTION_TOKENS};
use crate::probing::ProbeHyperparams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalysisKind {
    Knockout,
    PatchscopeSweep,
    PatchGrid,
    SwapPairs,
    Probe,
    Mas,
    BuildDataset,
    Filter,
    StoryEval,
}

impl AnalysisKind {
    pub const ALL: [AnalysisKind; 9] = [
        AnalysisKind::Knockout,
        AnalysisKind::PatchscopeSweep,
        AnalysisKind::PatchGrid,
        AnalysisKind::SwapPairs,
        AnalysisKind::Probe,
        AnalysisKind::Mas,
        AnalysisKind::BuildDataset,
        AnalysisKind::Filter,
        AnalysisKind::StoryEval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnalysisKind::Knockout => "knockout",
            AnalysisKind::PatchscopeSweep => "patchscope-sweep",
            AnalysisKind::PatchGrid => "patch-grid",
            AnalysisKind::SwapPairs => "swap-pairs",
            AnalysisKind::Probe => "probe",
            AnalysisKind::Mas => "mas",
            AnalysisKind::BuildDataset => "build-dataset",
            AnalysisKind::Filter => "filter",
            AnalysisKind::StoryEval => "story-eval",
        }
    }

    /// Analyses that always need the model. The oracle-driven ones need it
    /// only without a scripted oracle.
    fn always_needs_model(self) -> bool {
        !matches!(
            self,
            AnalysisKind::BuildDataset | AnalysisKind::Filter | AnalysisKind::StoryEval
        )
    }

    fn required_datasets(self) -> &'static [&'static str] {
        match self {
            AnalysisKind::Knockout
            | AnalysisKind::PatchscopeSweep
            | AnalysisKind::PatchGrid
            | AnalysisKind::SwapPairs
            | AnalysisKind::Filter => &["analogies"],
            AnalysisKind::Probe | AnalysisKind::Mas | AnalysisKind::StoryEval => &["stories"],
            AnalysisKind::BuildDataset => &["kb"],
        }
    }
}

impl fmt::Display for AnalysisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnalysisKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|k| k.as_str()).collect();
            format!("unknown analysis {s:?} (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analogies: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stories: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kb: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub related_entities: Option<PathBuf>,
    /// Scripted answers; replaces the engine as the oracle when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_script: Option<PathBuf>,
}

impl DatasetPaths {
    fn get(&self, name: &str) -> Option<&PathBuf> {
        match name {
            "analogies" => self.analogies.as_ref(),
            "stories" => self.stories.as_ref(),
            "kb" => self.kb.as_ref(),
            "related_entities" => self.related_entities.as_ref(),
            "oracle_script" => self.oracle_script.as_ref(),
            _ => None,
        }
    }

    fn entries(&self) -> [(&'static str, Option<&PathBuf>); 5] {
        [
            ("analogies", self.analogies.as_ref()),
            ("stories", self.stories.as_ref()),
            ("kb", self.kb.as_ref()),
            ("related_entities", self.related_entities.as_ref()),
            ("oracle_script", self.oracle_script.as_ref()),
        ]
    }
}

/// One analysis run as read from a config file. Relative paths resolve
/// against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub analysis: AnalysisKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub datasets: DatasetPaths,
    #[serde(default = "empty_object")]
    pub params: Value,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnockoutParams {
    pub positions: Vec<SpanLabel>,
    pub max_new: usize,
}

impl Default for KnockoutParams {
    fn default() -> Self {
        Self {
            positions: SpanLabel::ALL.to_vec(),
            max_new: COMPARE_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchscopeParams {
    pub position: SourcePosition,
    pub info: InfoKind,
    #[serde(default = "description_tokens")]
    pub max_new: usize,
    #[serde(default)]
    pub target_layer: Option<usize>,
}

fn description_tokens() -> usize {
    DESCRIPTION_TOKENS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchGridParams {
    pub source: SpanLabel,
    pub target: SpanLabel,
    pub max_new: usize,
}

impl Default for PatchGridParams {
    fn default() -> Self {
        Self {
            source: SpanLabel::E2,
            target: SpanLabel::Link,
            max_new: COMPARE_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwapParams {
    /// Relation surfaces kept for the experiment.
    pub relations: Vec<String>,
    pub max_new: usize,
}

impl Default for SwapParams {
    fn default() -> Self {
        Self {
            relations: SWAP_RELATIONS.iter().map(|s| s.to_string()).collect(),
            max_new: COMPARE_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Candidate {
    Target,
    Distractor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapRequest {
    pub story: String,
    pub layer: usize,
    #[serde(default = "default_candidate")]
    pub candidate: Candidate,
}

fn default_candidate() -> Candidate {
    Candidate::Target
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MasParams {
    pub heatmaps: Vec<HeatmapRequest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildParams {
    /// Run the knowledge and shortcut filters.
    pub filter: bool,
    /// Balanced sample size per label; everything when absent.
    pub n_per_label: Option<usize>,
    /// Tokens the engine oracle generates per query.
    pub max_new: usize,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            filter: true,
            n_per_label: None,
            max_new: COMPARE_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    pub max_new: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            max_new: COMPARE_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoryEvalParams {
    pub scheme: OptionScheme,
    pub max_new: usize,
}

impl Default for StoryEvalParams {
    fn default() -> Self {
        Self {
            scheme: OptionScheme::Numeric,
            max_new: 4,
        }
    }
}

/// A config problem located by a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

pub(crate) fn parse_params<T: DeserializeOwned>(params: &Value) -> Result<T, Diagnostic> {
    serde_json::from_value(params.clone()).map_err(|e| Diagnostic::new("params", e.to_string()))
}

const TOP_LEVEL: [&str; 6] = ["analysis", "model_dir", "output_dir", "seed", "datasets", "params"];

/// Config file loaded, checked and resolved.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Directory relative paths resolve against.
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn dataset(&self, name: &str) -> Option<PathBuf> {
        self.config.datasets.get(name).map(|p| self.resolve(p))
    }

    pub fn model_dir(&self) -> Option<PathBuf> {
        self.config.model_dir.as_ref().map(|p| self.resolve(p))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

/// Parse, override and check a config file. All problems are collected;
/// the config is returned only when there are none.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<LoadedConfig, Vec<Diagnostic>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        vec![Diagnostic::new(
            "<file>",
            format!("cannot read {}: {e}", path.display()),
        )]
    })?;
    let mut raw: Value =
        serde_json::from_str(&text).map_err(|e| vec![Diagnostic::new("<file>", format!("invalid JSON: {e}"))])?;
    if let Some(obj) = raw.as_object_mut() {
        if let Some(seed) = overrides.seed {
            obj.insert("seed".into(), Value::from(seed));
        }
        if let Some(dir) = &overrides.output_dir {
            // Command-line paths are relative to the working directory.
            let abs = std::env::current_dir()
                .map(|c| c.join(dir))
                .unwrap_or_else(|_| dir.clone());
            obj.insert("output_dir".into(), Value::from(abs.to_string_lossy().into_owned()));
        }
    }
    let base_dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let config = check_schema(&raw)?;
    let loaded = LoadedConfig { config, base_dir };
    let diags = check_semantics(&loaded);
    if diags.is_empty() {
        Ok(loaded)
    } else {
        Err(diags)
    }
}

/// Diagnostics only; never fails.
pub fn validate(path: &Path) -> Vec<Diagnostic> {
    match load_config(path, &Overrides::default()) {
        Ok(_) => Vec::new(),
        Err(d) => d,
    }
}

fn check_schema(raw: &Value) -> Result<RunConfig, Vec<Diagnostic>> {
    let Some(obj) = raw.as_object() else {
        return Err(vec![Diagnostic::new("<root>", "config must be a JSON object")]);
    };
    let mut diags = Vec::new();
    for key in obj.keys() {
        if !TOP_LEVEL.contains(&key.as_str()) {
            diags.push(Diagnostic::new(key.clone(), "unknown field"));
        }
    }
    match obj.get("analysis") {
        None => diags.push(Diagnostic::new("analysis", "missing required field")),
        Some(Value::String(s)) => {
            if let Err(e) = s.parse::<AnalysisKind>() {
                diags.push(Diagnostic::new("analysis", e));
            }
        }
        Some(_) => diags.push(Diagnostic::new("analysis", "expected a string")),
    }
    match obj.get("output_dir") {
        None => diags.push(Diagnostic::new("output_dir", "missing required field")),
        Some(Value::String(s)) if !s.is_empty() => {}
        Some(_) => diags.push(Diagnostic::new("output_dir", "expected a non-empty path string")),
    }
    match obj.get("model_dir") {
        None | Some(Value::String(_)) => {}
        Some(_) => diags.push(Diagnostic::new("model_dir", "expected a path string")),
    }
    match obj.get("seed") {
        None => diags.push(Diagnostic::new("seed", "missing required field")),
        Some(v) => {
            if v.as_u64().is_none() {
                let msg = match v.as_i64() {
                    Some(n) if n < 0 => format!("must be non-negative, got {n}"),
                    _ => "expected a non-negative integer".to_string(),
                };
                diags.push(Diagnostic::new("seed", msg));
            }
        }
    }
    match obj.get("datasets") {
        None => {}
        Some(Value::Object(ds)) => {
            for (k, v) in ds {
                let known = ["analogies", "stories", "kb", "related_entities", "oracle_script"];
                if !known.contains(&k.as_str()) {
                    diags.push(Diagnostic::new(format!("datasets.{k}"), "unknown dataset"));
                } else if !v.is_string() {
                    diags.push(Diagnostic::new(format!("datasets.{k}"), "expected a path string"));
                }
            }
        }
        Some(_) => diags.push(Diagnostic::new("datasets", "expected an object")),
    }
    if let Some(p) = obj.get("params") {
        if !p.is_object() {
            diags.push(Diagnostic::new("params", "expected an object"));
        }
    }
    if !diags.is_empty() {
        return Err(diags);
    }
    serde_json::from_value(raw.clone()).map_err(|e| vec![Diagnostic::new("<root>", e.to_string())])
}

fn check_semantics(cfg: &LoadedConfig) -> Vec<Diagnostic> {
    let c = &cfg.config;
    let mut diags = Vec::new();

    let needs_model = c.analysis.always_needs_model() || c.datasets.oracle_script.is_none();
    match cfg.model_dir() {
        None if needs_model => diags.push(Diagnostic::new(
            "model_dir",
            format!("required by {} (or supply datasets.oracle_script)", c.analysis),
        )),
        None => {}
        Some(dir) => {
            if !dir.is_dir() {
                diags.push(Diagnostic::new(
                    "model_dir",
                    format!("{} is not a directory", dir.display()),
                ));
            } else {
                for f in [CONFIG_FILE, ARCHIVE_FILE, VOCAB_FILE] {
                    if !dir.join(f).is_file() {
                        diags.push(Diagnostic::new(
                            "model_dir",
                            format!("missing {f} in {}", dir.display()),
                        ));
                    }
                }
            }
        }
    }

    for (name, path) in c.datasets.entries() {
        if let Some(p) = path {
            let p = cfg.resolve(p);
            if !p.is_file() {
                diags.push(Diagnostic::new(
                    format!("datasets.{name}"),
                    format!("{} does not exist", p.display()),
                ));
            }
        }
    }
    for name in c.analysis.required_datasets() {
        if c.datasets.get(name).is_none() {
            diags.push(Diagnostic::new(
                format!("datasets.{name}"),
                format!("required by {}", c.analysis),
            ));
        }
    }

    let params: Result<(), Diagnostic> = match c.analysis {
        AnalysisKind::Knockout => parse_params::<KnockoutParams>(&c.params).map(|_| ()),
        AnalysisKind::PatchscopeSweep => parse_params::<PatchscopeParams>(&c.params).map(|p| {
            if p.info == InfoKind::Attributive && c.datasets.related_entities.is_none() {
                diags.push(Diagnostic::new(
                    "datasets.related_entities",
                    "required for attributive decoding",
                ));
            }
        }),
        AnalysisKind::PatchGrid => parse_params::<PatchGridParams>(&c.params).map(|_| ()),
        AnalysisKind::SwapPairs => parse_params::<SwapParams>(&c.params).map(|_| ()),
        AnalysisKind::Probe => parse_params::<ProbeHyperparams>(&c.params).map(|p| {
            if p.folds < 2 {
                diags.push(Diagnostic::new("params.folds", "need at least 2 folds"));
            }
        }),
        AnalysisKind::Mas => parse_params::<MasParams>(&c.params).map(|_| ()),
        AnalysisKind::BuildDataset => parse_params::<BuildParams>(&c.params).map(|_| ()),
        AnalysisKind::Filter => parse_params::<FilterParams>(&c.params).map(|_| ()),
        AnalysisKind::StoryEval => parse_params::<StoryEvalParams>(&c.params).map(|_| ()),
    };
    if let Err(d) = params {
        diags.push(d);
    }

    if c.analysis.required_datasets().contains(&"analogies") {
        if let Some(p) = cfg.dataset("analogies").filter(|p| p.is_file()) {
            diags.extend(check_analogy_records(&p));
        }
    }
    if c.analysis.required_datasets().contains(&"stories") {
        if let Some(p) = cfg.dataset("stories").filter(|p| p.is_file()) {
            diags.extend(check_story_records(&p));
        }
    }
    diags
}

fn jsonl_records(path: &Path, field: &str) -> Result<Vec<(usize, Value)>, Diagnostic> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Diagnostic::new(format!("datasets.{field}"), format!("cannot read: {e}")))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line)
            .map_err(|e| Diagnostic::new(format!("datasets.{field}"), format!("line {}: {e}", i + 1)))?;
        out.push((i + 1, v));
    }
    Ok(out)
}

fn check_required_strings(path: &Path, field: &str, required: &[&str]) -> Vec<Diagnostic> {
    let records = match jsonl_records(path, field) {
        Ok(r) => r,
        Err(d) => return vec![d],
    };
    let mut diags = Vec::new();
    for (line, v) in records {
        let id = v.get("id").and_then(Value::as_str).map(str::to_string);
        let who = match &id {
            Some(id) => format!("instance {id:?}"),
            None => format!("line {line}"),
        };
        if id.is_none() {
            diags.push(Diagnostic::new(
                format!("datasets.{field}"),
                format!("line {line}: missing field \"id\""),
            ));
        }
        for name in required {
            match v.get(*name).and_then(Value::as_str) {
                Some(s) if !s.trim().is_empty() => {}
                Some(_) => diags.push(Diagnostic::new(
                    format!("datasets.{field}"),
                    format!("{who}: field {name:?} is empty"),
                )),
                None => diags.push(Diagnostic::new(
                    format!("datasets.{field}"),
                    format!("{who}: missing field {name:?}"),
                )),
            }
        }
    }
    diags
}

fn check_analogy_records(path: &Path) -> Vec<Diagnostic> {
    check_required_strings(
        path,
        "analogies",
        &["relation_id", "relation_surface", "e1", "e2", "e3", "e4"],
    )
}

fn check_story_records(path: &Path) -> Vec<Diagnostic> {
    check_required_strings(path, "stories", &["source", "target", "distractor"])
}
