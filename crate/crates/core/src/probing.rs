// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-(layer, head) linear probes separating analogous story pairs from
//! lexically similar ones.
//!
//! Features are the attention-weighted value vector of one head at the
//! final token of a "Story A: … Story B: …" prompt. Each cell trains an
//! L2-regularized logistic regression by full-batch gradient descent and
//! reports mean validation accuracy over stratified k-fold splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{render_pair, StoryInstance};
use crate::error::{Error, Result};
use crate::model::{ForwardTrace, Model};
use crate::report;

/// Head output at `pos`: attention-weighted values before the output
/// projection, `d_head` long.
pub fn extract_head_activation(trace: &ForwardTrace, layer: usize, head: usize, pos: usize) -> Result<Vec<f32>> {
    if layer >= trace.n_layers() || head >= trace.n_heads() || pos >= trace.seq_len() {
        return Err(Error::Probe(format!(
            "head activation (layer {layer}, head {head}, pos {pos}) outside trace of {}x{}x{}",
            trace.n_layers(),
            trace.n_heads(),
            trace.seq_len()
        )));
    }
    Ok(trace.head_output(layer, pos, head).to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Target,
    Distractor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbePair {
    pub pair_id: String,
    pub source: String,
    pub candidate: String,
    pub label: PairLabel,
}

/// Each story contributes a (source, target) and a (source, distractor)
/// pair.
pub fn pairs_from_stories(stories: &[StoryInstance]) -> Vec<ProbePair> {
    stories
        .iter()
        .flat_map(|s| {
            [
                ProbePair {
                    pair_id: format!("{}:target", s.id),
                    source: s.source.clone(),
                    candidate: s.target.clone(),
                    label: PairLabel::Target,
                },
                ProbePair {
                    pair_id: format!("{}:distractor", s.id),
                    source: s.source.clone(),
                    candidate: s.distractor.clone(),
                    label: PairLabel::Distractor,
                },
            ]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSample {
    pub x: Vec<f32>,
    /// True for target pairs.
    pub y: bool,
    pub layer: usize,
    pub head: usize,
    pub pair_id: String,
}

/// Samples grouped by cell: `cells[layer * n_heads + head]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    pub n_layers: usize,
    pub n_heads: usize,
    pub cells: Vec<Vec<ProbeSample>>,
}

impl ProbeDataset {
    pub fn cell(&self, layer: usize, head: usize) -> &[ProbeSample] {
        &self.cells[layer * self.n_heads + head]
    }

    pub fn len(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One forward pass per pair; a sample for every (layer, head).
pub fn build_probe_dataset(model: &Model, pairs: &[ProbePair]) -> Result<ProbeDataset> {
    let (n_layers, n_heads) = (model.n_layers(), model.config().n_heads);
    let per_pair: Vec<Vec<ProbeSample>> = pairs
        .par_iter()
        .map(|pair| {
            let prompt = render_pair(&pair.source, &pair.candidate);
            let tokens = model.tokenize(&prompt.text);
            let trace = model.forward(&tokens, None)?;
            let last = tokens.len() - 1;
            let mut samples = Vec::with_capacity(n_layers * n_heads);
            for layer in 0..n_layers {
                for head in 0..n_heads {
                    samples.push(ProbeSample {
                        x: extract_head_activation(&trace, layer, head, last)?,
                        y: pair.label == PairLabel::Target,
                        layer,
                        head,
                        pair_id: pair.pair_id.clone(),
                    });
                }
            }
            Ok(samples)
        })
        .collect::<Result<_>>()?;
    let mut cells = vec![Vec::with_capacity(pairs.len()); n_layers * n_heads];
    for samples in per_pair {
        for (i, s) in samples.into_iter().enumerate() {
            cells[i].push(s);
        }
    }
    Ok(ProbeDataset {
        n_layers,
        n_heads,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeHyperparams {
    pub folds: usize,
    pub l2: f64,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for ProbeHyperparams {
    fn default() -> Self {
        Self {
            folds: 5,
            l2: 1e-3,
            learning_rate: 0.1,
            iterations: 500,
        }
    }
}

/// Logistic-regression weights over standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl LinearProbe {
    /// Standardize with the training statistics, then run full-batch
    /// gradient descent on the mean logistic loss plus `l2/2 · |w|²`.
    pub fn fit(xs: &[&[f32]], ys: &[bool], hp: &ProbeHyperparams) -> Self {
        let n = xs.len();
        let d = xs.first().map_or(0, |x| x.len());
        let mut mean = vec![0.0; d];
        for x in xs {
            for (m, &v) in mean.iter_mut().zip(x.iter()) {
                *m += f64::from(v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut scale = vec![0.0; d];
        for x in xs {
            for ((s, &v), m) in scale.iter_mut().zip(x.iter()).zip(&mean) {
                *s += (f64::from(v) - m).powi(2);
            }
        }
        for s in &mut scale {
            let sd = (*s / n as f64).sqrt();
            *s = if sd > 1e-12 { sd } else { 1.0 };
        }
        let feats: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| {
                x.iter()
                    .zip(&mean)
                    .zip(&scale)
                    .map(|((&v, m), s)| (f64::from(v) - m) / s)
                    .collect()
            })
            .collect();

        let mut weights = vec![0.0; d];
        let mut bias = 0.0;
        let mut grad = vec![0.0; d];
        for _ in 0..hp.iterations {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut grad_b = 0.0;
            for (f, &y) in feats.iter().zip(ys) {
                let z: f64 = bias + f.iter().zip(&weights).map(|(a, w)| a * w).sum::<f64>();
                let err = sigmoid(z) - f64::from(u8::from(y));
                for (g, a) in grad.iter_mut().zip(f) {
                    *g += err * a;
                }
                grad_b += err;
            }
            for (w, g) in weights.iter_mut().zip(&grad) {
                *w -= hp.learning_rate * (g / n as f64 + hp.l2 * *w);
            }
            bias -= hp.learning_rate * grad_b / n as f64;
        }
        Self {
            mean,
            scale,
            weights,
            bias,
        }
    }

    pub fn predict(&self, x: &[f32]) -> bool {
        let z: f64 = self.bias
            + x.iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .zip(&self.weights)
                .map(|(((&v, m), s), w)| (f64::from(v) - m) / s * w)
                .sum::<f64>();
        z >= 0.0
    }

    pub fn accuracy(&self, xs: &[&[f32]], ys: &[bool]) -> f64 {
        if xs.is_empty() {
            return 0.0;
        }
        let hits = xs.iter().zip(ys).filter(|(x, &y)| self.predict(x) == y).count();
        hits as f64 / xs.len() as f64
    }
}

/// Stratified fold assignment: each class is shuffled with the seeded
/// generator and dealt round-robin, so remainders land in the earliest
/// folds.
pub fn stratified_folds(ys: &[bool], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Probe(format!("need at least 2 folds, got {folds}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; ys.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..ys.len()).filter(|&i| ys[i] == class).collect();
        if idx.len() < folds {
            return Err(Error::Probe(format!(
                "class {} has {} samples, fewer than {folds} folds",
                u8::from(class),
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            assignment[i] = k % folds;
        }
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvOutcome {
    pub mean_accuracy: f64,
    pub fold_accuracies: Vec<f64>,
}

/// k-fold cross-validated accuracy of a linear probe.
pub fn train_probe_cv(xs: &[&[f32]], ys: &[bool], hp: &ProbeHyperparams, seed: u64) -> Result<CvOutcome> {
    if xs.len() != ys.len() {
        return Err(Error::Probe("feature and label counts differ".into()));
    }
    if let Some(bad) = xs.iter().position(|x| x.iter().any(|v| !v.is_finite())) {
        return Err(Error::Probe(format!("sample {bad} has non-finite features")));
    }
    let assignment = stratified_folds(ys, hp.folds, seed)?;
    let mut fold_accuracies = Vec::with_capacity(hp.folds);
    for fold in 0..hp.folds {
        let (mut tr_x, mut tr_y, mut va_x, mut va_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, &f) in assignment.iter().enumerate() {
            if f == fold {
                va_x.push(xs[i]);
                va_y.push(ys[i]);
            } else {
                tr_x.push(xs[i]);
                tr_y.push(ys[i]);
            }
        }
        if !(tr_y.contains(&true) && tr_y.contains(&false)) {
            return Err(Error::Probe(format!(
                "fold {fold}: a class is absent from the training split"
            )));
        }
        let probe = LinearProbe::fit(&tr_x, &tr_y, hp);
        fold_accuracies.push(probe.accuracy(&va_x, &va_y));
    }
    let mean_accuracy = fold_accuracies.iter().sum::<f64>() / fold_accuracies.len() as f64;
    Ok(CvOutcome {
        mean_accuracy,
        fold_accuracies,
    })
}

/// Layers × heads accuracy grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    pub n_layers: usize,
    pub n_heads: usize,
    /// `accuracy[layer][head]`
    pub accuracy: Vec<Vec<f64>>,
    /// `fold_accuracies[layer][head][fold]`
    pub fold_accuracies: Vec<Vec<Vec<f64>>>,
    pub seed: u64,
    pub hyperparams: ProbeHyperparams,
}

impl ProbeResult {
    /// Rows are layers, columns heads.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let heads: Vec<String> = (0..self.n_heads).map(|h| format!("head_{h}")).collect();
        report::matrix_csv("layer", &report::index_labels(self.n_layers), &heads, &self.accuracy)
    }
}

pub fn probe_grid_from_dataset(dataset: &ProbeDataset, hp: &ProbeHyperparams, seed: u64) -> Result<ProbeResult> {
    let outcomes: Vec<CvOutcome> = dataset
        .cells
        .par_iter()
        .map(|cell| {
            let xs: Vec<&[f32]> = cell.iter().map(|s| s.x.as_slice()).collect();
            let ys: Vec<bool> = cell.iter().map(|s| s.y).collect();
            train_probe_cv(&xs, &ys, hp, seed)
        })
        .collect::<Result<_>>()?;
    let mut accuracy = vec![vec![0.0; dataset.n_heads]; dataset.n_layers];
    let mut fold_accuracies = vec![vec![Vec::new(); dataset.n_heads]; dataset.n_layers];
    for (i, o) in outcomes.into_iter().enumerate() {
        let (l, h) = (i / dataset.n_heads, i % dataset.n_heads);
        accuracy[l][h] = o.mean_accuracy;
        fold_accuracies[l][h] = o.fold_accuracies;
    }
    Ok(ProbeResult {
        n_layers: dataset.n_layers,
        n_heads: dataset.n_heads,
        accuracy,
        fold_accuracies,
        seed,
        hyperparams: hp.clone(),
    })
}

pub fn probe_grid(model: &Model, pairs: &[ProbePair], hp: &ProbeHyperparams, seed: u64) -> Result<ProbeResult> {
    let dataset = build_probe_dataset(model, pairs)?;
    probe_grid_from_dataset(&dataset, hp, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy;

    #[test]
    fn single_token_head_output_is_own_value() {
        let model = toy::random_model(&toy::small_config(), 2);
        let tokens = model.tokenize("Paris");
        assert_eq!(tokens.len(), 1);
        let trace = model.forward(&tokens, None).unwrap();
        let dh = trace.d_head();
        for layer in 0..trace.n_layers() {
            let v = model.value_vectors(layer, trace.layer_states(layer)).unwrap();
            for head in 0..trace.n_heads() {
                let got = extract_head_activation(&trace, layer, head, 0).unwrap();
                assert_eq!(got.as_slice(), &v[head * dh..(head + 1) * dh]);
            }
        }
    }

    #[test]
    fn out_of_range_is_error() {
        let model = toy::random_model(&toy::small_config(), 2);
        let trace = model.forward(&model.tokenize("Paris is"), None).unwrap();
        assert!(extract_head_activation(&trace, 99, 0, 0).is_err());
        assert!(extract_head_activation(&trace, 0, 99, 0).is_err());
        assert!(extract_head_activation(&trace, 0, 0, 99).is_err());
    }

    #[test]
    fn folds_are_stratified_with_remainder_first() {
        let ys: Vec<bool> = (0..23).map(|i| i < 12).collect();
        let a = stratified_folds(&ys, 5, 7).unwrap();
        let count = |class: bool, f: usize| (0..23).filter(|&i| ys[i] == class && a[i] == f).count();
        assert_eq!((0..5).map(|f| count(true, f)).collect::<Vec<_>>(), vec![3, 3, 2, 2, 2]);
        assert_eq!((0..5).map(|f| count(false, f)).collect::<Vec<_>>(), vec![3, 2, 2, 2, 2]);
        assert_eq!(a, stratified_folds(&ys, 5, 7).unwrap());
    }

    #[test]
    fn too_few_per_class_is_error() {
        let ys = [true, true, true, false, false];
        let xs: Vec<Vec<f32>> = vec![vec![0.0]; 5];
        let xr: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
        assert!(matches!(
            train_probe_cv(&xr, &ys, &ProbeHyperparams::default(), 0),
            Err(Error::Probe(_))
        ));
    }

    #[test]
    fn pair_count_and_duplicates() {
        let model = toy::random_model(&toy::small_config(), 2);
        let stories = toy::sample_stories();
        let mut pairs = pairs_from_stories(&stories[..2]);
        pairs.push(pairs[0].clone());
        let ds = build_probe_dataset(&model, &pairs).unwrap();
        let (l, h) = (model.n_layers(), model.config().n_heads);
        assert_eq!(ds.len(), pairs.len() * l * h);
        let cell = ds.cell(1, 2);
        assert_eq!(cell[0], cell[pairs.len() - 1]);
    }
}
