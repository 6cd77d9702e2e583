// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small models and datasets for tests, examples and demos.
//!
//! Random models exercise the engine generically. The hand-built models
//! have weights chosen so that a specific attention edge or residual state
//! decides the answer, which makes intervention outcomes known in advance.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use crate::dataset::io::to_jsonl;
use crate::dataset::{
    generate_analogies, render_question, AnalogyInstance, Label, OptionScheme, RelationPairRecord, StoryInstance,
    DEFAULT_QUERY_TEMPLATE,
};
use crate::error::{Error, Result};
use crate::experiment::AnalysisKind;
use crate::model::{save_model_dir, Model, ModelConfig, TensorArchive, Vocab};
use crate::patchscopes::{RelatedEntities, ATTRIBUTIVE_PROMPT, RELATION_EXEMPLARS};

/// (relation id, surface, aliases, [(head, tail)])
type RelationTable = (
    &'static str,
    &'static str,
    &'static [&'static str],
    &'static [(&'static str, &'static str)],
);

const RELATIONS: &[RelationTable] = &[
    (
        "capital_of",
        "capital of",
        &["capital of", "capital city"],
        &[
            ("France", "Paris"),
            ("Japan", "Tokyo"),
            ("Italy", "Rome"),
            ("Norway", "Oslo"),
            ("Peru", "Lima"),
        ],
    ),
    (
        "official_language_of",
        "official language of",
        &["official language of", "language of"],
        &[
            ("France", "French"),
            ("Japan", "Japanese"),
            ("Italy", "Italian"),
            ("Norway", "Norwegian"),
        ],
    ),
    (
        "author_of",
        "author of",
        &["author of", "written by", "wrote"],
        &[
            ("Persuasion", "Jane Austen"),
            ("The Sign of Four", "Arthur Conan Doyle"),
            ("Don Quixote", "Miguel de Cervantes"),
            ("Hamlet", "William Shakespeare"),
        ],
    ),
    (
        "composer_of",
        "composer of",
        &["composer of", "composed by"],
        &[("The Magic Flute", "Mozart"), ("Carmen", "Bizet"), ("Aida", "Verdi")],
    ),
];

const STORIES: &[(&str, &str, &str)] = &[
    (
        "Water flows through pipes into the house.",
        "Air flows through the airways into the lungs.",
        "Water is stored in a tank beside the house.",
    ),
    (
        "The sun pulls the planets into orbit around it.",
        "The nucleus pulls the electrons into orbit around it.",
        "The sun warms the planets during the long day.",
    ),
    (
        "A general splits his army to attack the fortress from all sides.",
        "A doctor splits the ray to attack the tumor from all sides.",
        "A general feeds his army before the march to the fortress.",
    ),
    (
        "The heart pumps blood through the body.",
        "The pump pushes water through the city.",
        "The heart grows stronger with daily exercise.",
    ),
    (
        "A key opens the lock on the door.",
        "A password opens the account on the computer.",
        "A key hangs on a hook beside the door.",
    ),
    (
        "Bees carry pollen from flower to flower.",
        "Trucks carry goods from city to city.",
        "Bees sleep inside the hive at night.",
    ),
];

const RELATED: &[(&str, &[&str])] = &[
    ("France", &["Europe", "Paris", "French"]),
    ("Japan", &["Asia", "Tokyo", "Japanese", "island"]),
    ("Italy", &["Europe", "Rome", "Italian"]),
    ("Norway", &["Europe", "Oslo", "Norwegian"]),
    ("Peru", &["Andes", "Lima", "South America"]),
    ("Paris", &["France", "Seine", "city"]),
    ("Tokyo", &["Japan", "city", "Asia"]),
    ("Rome", &["Italy", "city", "Tiber"]),
    ("Oslo", &["Norway", "city"]),
    ("Lima", &["Peru", "city"]),
    ("French", &["France", "language"]),
    ("Japanese", &["Japan", "language"]),
    ("Italian", &["Italy", "language"]),
    ("Norwegian", &["Norway", "language"]),
    ("Persuasion", &["novel", "Jane Austen"]),
    ("The Sign of Four", &["novel", "Sherlock Holmes"]),
    ("Don Quixote", &["novel", "Spanish", "knight"]),
    ("Hamlet", &["play", "Denmark", "prince"]),
    ("Jane Austen", &["English", "novelist", "writer"]),
    ("Arthur Conan Doyle", &["Scottish", "writer", "Sherlock Holmes"]),
    ("Miguel de Cervantes", &["Spanish", "writer", "novelist"]),
    ("William Shakespeare", &["English", "playwright", "poet"]),
    ("The Magic Flute", &["opera", "Mozart"]),
    ("Carmen", &["opera", "Spain"]),
    ("Aida", &["opera", "Egypt"]),
    ("Mozart", &["Austrian", "composer"]),
    ("Bizet", &["French", "composer"]),
    ("Verdi", &["Italian", "composer"]),
];

/// Extra words the fixtures and demo prompts rely on.
const EXTRA_WORDS: &[&str] = &[
    " Kay",
    " Alpha",
    " Beta",
    " is",
    " to",
    " as",
    " The",
    "The",
    " Story",
    " A",
    " B",
    " Answer",
    " x",
    "x",
    " Which",
    " of",
    " the",
    " following",
    " stories",
    " analogous",
    " source",
    " story",
    "Source",
];

pub fn sample_kb() -> Vec<RelationPairRecord> {
    RELATIONS
        .iter()
        .flat_map(|&(id, surface, aliases, pairs)| {
            pairs.iter().map(move |&(head, tail)| RelationPairRecord {
                relation_id: id.to_string(),
                relation_surface: surface.to_string(),
                aliases: aliases.iter().map(|s| s.to_string()).collect(),
                head: head.to_string(),
                tail: tail.to_string(),
                query_template: None,
            })
        })
        .collect()
}

/// Every ordered pair-of-pairs within each relation of [`sample_kb`].
pub fn sample_analogies() -> Vec<AnalogyInstance> {
    generate_analogies(&sample_kb()).expect("sample KB is valid")
}

pub fn sample_stories() -> Vec<StoryInstance> {
    STORIES
        .iter()
        .enumerate()
        .map(|(i, &(source, target, distractor))| StoryInstance {
            id: format!("story-{i}"),
            source: source.to_string(),
            target: target.to_string(),
            distractor: distractor.to_string(),
            target_first: i % 2 == 0,
            label: Label::Unlabeled,
        })
        .collect()
}

pub fn sample_related_entities() -> RelatedEntities {
    RelatedEntities(
        RELATED
            .iter()
            .map(|&(e, rel)| (e.to_string(), rel.iter().map(|s| s.to_string()).collect()))
            .collect::<HashMap<_, _>>(),
    )
}

/// Alphanumeric runs and single punctuation marks, each with and without
/// a leading space.
fn words_of(text: &str, out: &mut BTreeSet<String>) {
    let mut word = String::new();
    let flush = |w: &mut String, out: &mut BTreeSet<String>| {
        if !w.is_empty() {
            out.insert(w.clone());
            out.insert(format!(" {w}"));
            w.clear();
        }
    };
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.push(ch);
        } else {
            flush(&mut word, out);
            if !ch.is_whitespace() {
                out.insert(ch.to_string());
            }
        }
    }
    flush(&mut word, out);
}

/// Word-level vocab covering the sample datasets and the built-in prompts.
pub fn demo_vocab() -> Vocab {
    let mut words = BTreeSet::new();
    for r in sample_kb() {
        words_of(&r.head, &mut words);
        words_of(&r.tail, &mut words);
        words_of(&r.relation_surface, &mut words);
        for a in &r.aliases {
            words_of(a, &mut words);
        }
    }
    for s in sample_stories() {
        for t in [&s.source, &s.target, &s.distractor] {
            words_of(t, &mut words);
        }
    }
    for (_, rel) in RELATED {
        for r in *rel {
            words_of(r, &mut words);
        }
    }
    words_of(RELATION_EXEMPLARS, &mut words);
    words_of(ATTRIBUTIVE_PROMPT, &mut words);
    words.extend(EXTRA_WORDS.iter().map(|s| s.to_string()));
    // Single bytes are already covered by the byte tokens.
    let words: Vec<String> = words.into_iter().filter(|w| w.len() > 1).collect();
    Vocab::from_words(&words)
}

/// Four layers, four heads, width 32; sized for fast tests.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        n_layers: 4,
        n_heads: 4,
        d_model: 32,
        d_ff: 64,
        vocab_size: demo_vocab().len(),
        max_seq_len: 256,
        norm_epsilon: 1e-5,
        rope_base: 10000.0,
    }
}

/// Gaussian weights scaled by `1/sqrt(fan_in)`, unit norm weights and
/// standard-normal embeddings. Same seed, same bytes.
pub fn random_archive(config: &ModelConfig, seed: u64) -> TensorArchive {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut archive = TensorArchive::new();
    for (name, shape) in config.expected_tensors() {
        let n: usize = shape.iter().product();
        let data = if name.ends_with("norm.weight") {
            vec![1.0; n]
        } else {
            let std = if name == "embed.weight" {
                1.0
            } else {
                1.0 / (shape[1] as f32).sqrt()
            };
            let dist = Normal::new(0.0f32, std).expect("finite std");
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        };
        archive.insert(name, shape, data).expect("fresh name");
    }
    archive
}

/// Random model over [`demo_vocab`]. `config.vocab_size` is overridden to
/// match the vocab.
pub fn random_model(config: &ModelConfig, seed: u64) -> Model {
    let config = ModelConfig {
        vocab_size: demo_vocab().len(),
        ..config.clone()
    };
    let archive = random_archive(&config, seed);
    Model::from_parts(config, &archive, demo_vocab()).expect("consistent toy model")
}

/// Archive with every tensor zero except norm weights (one), then `edit`
/// is applied per tensor.
fn built_archive(config: &ModelConfig, mut edit: impl FnMut(&str, &mut [f32])) -> TensorArchive {
    let mut archive = TensorArchive::new();
    for (name, shape) in config.expected_tensors() {
        let n: usize = shape.iter().product();
        let mut data = if name.ends_with("norm.weight") {
            vec![1.0; n]
        } else {
            vec![0.0; n]
        };
        edit(&name, &mut data);
        archive.insert(name, shape, data).expect("fresh name");
    }
    archive
}

/// Every token embeds to the same unit vector and only `token` has a
/// nonzero output row, so greedy decoding repeats `token` forever.
pub fn constant_output_model(token: &str) -> Model {
    let vocab = demo_vocab();
    let target = vocab.id(token).expect("token in demo vocab") as usize;
    let config = ModelConfig {
        n_layers: 1,
        n_heads: 1,
        d_model: 8,
        d_ff: 8,
        vocab_size: vocab.len(),
        max_seq_len: 128,
        norm_epsilon: 1e-5,
        rope_base: 10000.0,
    };
    let d = config.d_model;
    let archive = built_archive(&config, |name, data| match name {
        "embed.weight" => data.iter_mut().step_by(d).for_each(|v| *v = 1.0),
        "lm_head.weight" => data[target * d] = 10.0,
        _ => {}
    });
    Model::from_parts(config, &archive, vocab).expect("consistent toy model")
}

/// One layer with all-zero blocks and a tied output head, so the final
/// state is the embedding of the last token. A patched-in embedding is
/// therefore decoded as its own token.
pub fn steering_model() -> Model {
    let vocab = demo_vocab();
    let config = ModelConfig {
        n_layers: 1,
        n_heads: 1,
        d_model: 64,
        d_ff: 8,
        vocab_size: vocab.len(),
        max_seq_len: 256,
        norm_epsilon: 1e-5,
        rope_base: 10000.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let dist = Normal::new(0.0f32, 1.0).expect("unit std");
    let embed: Vec<f32> = (0..vocab.len() * config.d_model)
        .map(|_| dist.sample(&mut rng))
        .collect();
    let archive = built_archive(&config, |name, data| {
        if name == "embed.weight" || name == "lm_head.weight" {
            data.copy_from_slice(&embed);
        }
    });
    Model::from_parts(config, &archive, vocab).expect("consistent toy model")
}

// Residual layout of the routing models.
const ONE: usize = 0;
const KEY: usize = 1;
const QRY: usize = 2;
const BIAS: usize = 3;
const SIG: usize = 4;
/// q/k live on head dim 3, whose rotary partner (dim 7) turns at about
/// 3e-5 rad per position with the base below; positions barely matter.
const QK: usize = 3;
const ROUTE_GAIN: f32 = 6.0;

const ROUTING_WORDS: &[&str] = &[
    "Paris", "Oslo", " Kay", " as", " Rome", " Lima", " is", " to", " Alpha", " Beta",
];

fn routing_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 1,
        d_model: 8,
        d_ff: 2,
        vocab_size,
        max_seq_len: 64,
        norm_epsilon: 1e-6,
        rope_base: 1.0e6,
    }
}

fn set(data: &mut [f32], cols: usize, row: usize, col: usize, v: f32) {
    data[row * cols + col] = v;
}

/// Embeddings and output head shared by the routing models. Every token
/// carries ONE; " Kay" adds KEY; " to" adds QRY and a BIAS of 1.5. " Alpha"
/// reads SIG and " Beta" reads BIAS, so the answer is " Alpha" exactly
/// when the resolution token gathered more than 1.5 of signal.
fn routing_io(vocab: &Vocab, name: &str, data: &mut [f32], d: usize) {
    let id = |t: &str| vocab.id(t).expect("routing word") as usize;
    match name {
        "embed.weight" => {
            for row in 0..vocab.len() {
                set(data, d, row, ONE, 1.0);
            }
            set(data, d, id(" Kay"), KEY, 1.0);
            set(data, d, id(" to"), QRY, 1.0);
            set(data, d, id(" to"), BIAS, 1.5);
        }
        "lm_head.weight" => {
            set(data, d, id(" Alpha"), SIG, 1.0);
            set(data, d, id(" Beta"), BIAS, 1.0);
        }
        _ => {}
    }
}

/// Attention that sends query tokens (QRY) to key tokens (KEY) and copies
/// `gain` times the key's normalized KEY component into SIG.
fn routing_attention(name: &str, layer: usize, data: &mut [f32], d: usize, gain: f32) {
    let p = |s: &str| format!("layers.{layer}.attn.{s}.weight");
    if name == p("q") {
        set(data, d, QK, QRY, ROUTE_GAIN);
    } else if name == p("k") {
        set(data, d, QK, KEY, ROUTE_GAIN);
    } else if name == p("v") {
        set(data, d, 0, KEY, 1.0);
    } else if name == p("o") {
        set(data, d, SIG, 0, gain);
    }
}

fn routing_instances(label: Label) -> Vec<AnalogyInstance> {
    let rel = RelationPairRecord {
        relation_id: "route".into(),
        relation_surface: "route".into(),
        aliases: vec![],
        head: "Paris".into(),
        tail: "Kay".into(),
        query_template: None,
    };
    [("Paris", "Rome"), ("Oslo", "Lima")]
        .iter()
        .enumerate()
        .map(|(i, &(e1, e3))| {
            let mut inst = AnalogyInstance::new(format!("route-{i}"), &rel, (e1, "Kay"), (e3, "Alpha"));
            inst.label = label;
            inst
        })
        .collect()
}

pub struct RoutingFixture {
    pub model: Model,
    /// Answered correctly at baseline.
    pub instances: Vec<AnalogyInstance>,
}

/// Two layers, one head. In each layer the resolution token reads about
/// one unit of signal from e2, and needs both to beat the bias. Blocking
/// the resolution→e2 edge in either layer flips the answer; blocking any
/// other span changes nothing.
pub fn routing_fixture() -> RoutingFixture {
    let vocab = Vocab::from_words(ROUTING_WORDS);
    let config = routing_config(vocab.len());
    let d = config.d_model;
    let archive = built_archive(&config, |name, data| {
        routing_io(&vocab, name, data, d);
        for layer in 0..2 {
            routing_attention(name, layer, data, d, 0.5);
        }
    });
    RoutingFixture {
        model: Model::from_parts(config, &archive, vocab).expect("consistent toy model"),
        instances: routing_instances(Label::Correct),
    }
}

pub struct PatchGridFixture {
    pub model: Model,
    /// Answered incorrectly at baseline.
    pub instances: Vec<AnalogyInstance>,
    /// The only (source layer, target layer) cell that corrects them.
    pub fixing_cell: (usize, usize),
}

/// Layer 0's MLP flips the sign of KEY wherever it is set, which hides e2
/// from layer 1's routing head, so the model answers " Beta". Putting e2's
/// pre-layer-0 state at the link position entering layer 1 restores the
/// route; every other cell either carries the flipped state or lets layer
/// 0 flip it again.
pub fn patch_grid_fixture() -> PatchGridFixture {
    let vocab = Vocab::from_words(ROUTING_WORDS);
    let config = routing_config(vocab.len());
    let (d, ff) = (config.d_model, config.d_ff);
    let archive = built_archive(&config, |name, data| {
        routing_io(&vocab, name, data, d);
        routing_attention(name, 1, data, d, 1.0);
        match name {
            "layers.0.mlp.gate.weight" => set(data, d, 0, KEY, 5.0),
            "layers.0.mlp.up.weight" => set(data, d, 0, ONE, 1.0),
            "layers.0.mlp.down.weight" => set(data, ff, KEY, 0, -0.1),
            _ => {}
        }
    });
    PatchGridFixture {
        model: Model::from_parts(config, &archive, vocab).expect("consistent toy model"),
        instances: routing_instances(Label::Incorrect),
        fixing_cell: (0, 1),
    }
}

/// Seed of the demo model weights.
pub const DEMO_MODEL_SEED: u64 = 2024;

/// The first `per_relation` analogies of each sample relation, labeled
/// alternately correct and incorrect within each relation.
pub fn demo_analogies(per_relation: usize) -> Vec<AnalogyInstance> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    sample_analogies()
        .into_iter()
        .filter_map(|mut inst| {
            let k = seen.entry(inst.relation_id.clone()).or_default();
            if *k >= per_relation {
                return None;
            }
            inst.label = if k.is_multiple_of(2) {
                Label::Correct
            } else {
                Label::Incorrect
            };
            *k += 1;
            Some(inst)
        })
        .collect()
}

/// Scripted answers: every knowledge query except those about the last
/// KB pair is answered right, full analogies are solved for even-indexed
/// instances, and story questions pick the target for even-indexed
/// stories and option 1 otherwise.
pub fn demo_oracle_script() -> BTreeMap<String, String> {
    let mut script = BTreeMap::new();
    let kb = sample_kb();
    for r in &kb[..kb.len() - 1] {
        let q = DEFAULT_QUERY_TEMPLATE
            .replace("{relation}", &r.relation_surface)
            .replace("{entity}", &r.head);
        script.insert(q, format!(" {}.", r.tail));
    }
    for (i, inst) in sample_analogies().iter().enumerate() {
        if i % 2 == 0 {
            script.insert(inst.prompt.clone(), format!(" {}", inst.e4));
        }
    }
    for (i, s) in sample_stories().iter().enumerate() {
        for target_first in [true, false] {
            let (first, second) = if target_first {
                (&s.target, &s.distractor)
            } else {
                (&s.distractor, &s.target)
            };
            let prompt = render_question(&s.source, first, second, OptionScheme::Numeric);
            let reply = if i % 2 == 1 || target_first { " 1" } else { " 2" };
            script.insert(prompt, reply.to_string());
        }
    }
    script.insert("*".into(), " unknown".into());
    script
}

/// Paths of a demo workspace written by [`write_demo`].
#[derive(Debug, Clone)]
pub struct DemoWorkspace {
    pub root: PathBuf,
    pub configs: Vec<(AnalysisKind, PathBuf)>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn demo_config(kind: AnalysisKind) -> serde_json::Value {
    let model = Some("../model");
    let (model, datasets, params) = match kind {
        AnalysisKind::Knockout => (model, json!({"analogies": "../data/analogies.jsonl"}), json!({})),
        AnalysisKind::PatchscopeSweep => (
            model,
            json!({"analogies": "../data/analogies.jsonl", "related_entities": "../data/related.json"}),
            json!({"position": "e2", "info": "attributive", "max_new": 8}),
        ),
        AnalysisKind::PatchGrid => (model, json!({"analogies": "../data/analogies.jsonl"}), json!({})),
        AnalysisKind::SwapPairs => (model, json!({"analogies": "../data/analogies.jsonl"}), json!({})),
        AnalysisKind::Probe => (
            model,
            json!({"stories": "../data/stories.jsonl"}),
            json!({"folds": 3, "iterations": 200}),
        ),
        AnalysisKind::Mas => (
            model,
            json!({"stories": "../data/stories_labeled.jsonl"}),
            json!({"heatmaps": [{"story": "story-0", "layer": 2}, {"story": "story-0", "layer": 2, "candidate": "distractor"}]}),
        ),
        AnalysisKind::BuildDataset => (
            None,
            json!({"kb": "../data/kb.jsonl", "oracle_script": "../data/oracle.json"}),
            json!({"n_per_label": 4}),
        ),
        AnalysisKind::Filter => (
            None,
            json!({"analogies": "../data/analogies.jsonl", "oracle_script": "../data/oracle.json"}),
            json!({}),
        ),
        AnalysisKind::StoryEval => (
            None,
            json!({"stories": "../data/stories.jsonl", "oracle_script": "../data/oracle.json"}),
            json!({"scheme": "numeric"}),
        ),
    };
    let mut cfg = json!({
        "analysis": kind,
        "output_dir": format!("../out/{kind}"),
        "seed": 7,
        "datasets": datasets,
        "params": params,
    });
    if let Some(m) = model {
        cfg["model_dir"] = json!(m);
    }
    cfg
}

/// Write a random demo model, sample datasets and one config per analysis
/// under `root`.
pub fn write_demo(root: &Path) -> Result<DemoWorkspace> {
    let config = ModelConfig {
        vocab_size: demo_vocab().len(),
        ..small_config()
    };
    save_model_dir(
        &root.join("model"),
        &config,
        &random_archive(&config, DEMO_MODEL_SEED),
        &demo_vocab(),
    )?;

    let data = root.join("data");
    write_file(&data.join("kb.jsonl"), &to_jsonl(&sample_kb())?)?;
    write_file(&data.join("analogies.jsonl"), &to_jsonl(&demo_analogies(4))?)?;
    let stories = sample_stories();
    write_file(&data.join("stories.jsonl"), &to_jsonl(&stories)?)?;
    let labeled: Vec<StoryInstance> = stories
        .into_iter()
        .enumerate()
        .map(|(i, s)| StoryInstance {
            label: if i % 2 == 0 { Label::Correct } else { Label::Incorrect },
            ..s
        })
        .collect();
    write_file(&data.join("stories_labeled.jsonl"), &to_jsonl(&labeled)?)?;
    let related: BTreeMap<_, _> = sample_related_entities().0.into_iter().collect();
    write_file(&data.join("related.json"), &serde_json::to_vec_pretty(&related)?)?;
    write_file(
        &data.join("oracle.json"),
        &serde_json::to_vec_pretty(&demo_oracle_script())?,
    )?;

    let mut configs = Vec::new();
    for kind in AnalysisKind::ALL {
        let path = root.join("configs").join(format!("{kind}.json"));
        write_file(&path, &serde_json::to_vec_pretty(&demo_config(kind))?)?;
        configs.push((kind, path));
    }
    Ok(DemoWorkspace {
        root: root.to_path_buf(),
        configs,
    })
}
