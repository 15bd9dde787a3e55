//! Last-layer softmax classifier over fixed embeddings.
//!
//! Trained by deterministic full-batch gradient descent on mean softmax
//! cross-entropy plus `(l2 / 2) * ||W||^2` (the bias is not regularized).
//! All arithmetic is `f64` with a fixed summation order.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::Prediction;
use crate::data::{ClassVocabulary, DatasetBundle, EmbeddingStore};

const CHECKPOINT_MAGIC: &[u8; 4] = b"WSCK";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("class {0:?} has no training samples")]
    EmptyClass(String),
    #[error("loss became non-finite at epoch {0}")]
    DivergedLoss(usize),
    #[error("input has dimension {found}, classifier expects {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("label index {0} out of range")]
    BadLabel(usize),
    #[error("class {0:?} is not in the classifier vocabulary")]
    UnknownClass(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    /// Fine-tuning starts from the current parameters when set, from zero otherwise.
    pub warm_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 200,
            l2: 1e-4,
            seed: 0,
            warm_start: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), LearnerError> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(LearnerError::InvalidConfig(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(LearnerError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.l2 >= 0.0) {
            return Err(LearnerError::InvalidConfig(format!("l2 {} must be >= 0", self.l2)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    vocabulary: ClassVocabulary,
    dim: usize,
    /// `classes × dim`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
    l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearClassifier {
    pub fn zeros(vocabulary: ClassVocabulary, dim: usize, l2: f64) -> Self {
        let c = vocabulary.len();
        Self {
            vocabulary,
            dim,
            weights: vec![0.0; c * dim],
            bias: vec![0.0; c],
            l2,
        }
    }

    pub fn from_parts(
        vocabulary: ClassVocabulary,
        dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        l2: f64,
    ) -> Result<Self, LearnerError> {
        let c = vocabulary.len();
        if weights.len() != c * dim || bias.len() != c {
            return Err(LearnerError::BadCheckpoint(format!(
                "expected {}x{} weights and {} biases",
                c, dim, c
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) || !l2.is_finite() {
            return Err(LearnerError::BadCheckpoint("non-finite parameter".into()));
        }
        Ok(Self {
            vocabulary,
            dim,
            weights,
            bias,
            l2,
        })
    }

    pub fn vocabulary(&self) -> &ClassVocabulary {
        &self.vocabulary
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    pub fn classes(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// Adds zero rows for every label of `vocabulary` this classifier lacks.
    pub fn extend_vocabulary(&mut self, vocabulary: &ClassVocabulary) {
        let merged = self.vocabulary.union(vocabulary);
        let added = merged.len() - self.vocabulary.len();
        self.weights.extend(std::iter::repeat_n(0.0, added * self.dim));
        self.bias.extend(std::iter::repeat_n(0.0, added));
        self.vocabulary = merged;
    }

    fn logits_into(&self, x: &[f32], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let w = &self.weights[c * self.dim..(c + 1) * self.dim];
            *o = self.bias[c] + w.iter().zip(x).map(|(&w, &x)| w * x as f64).sum::<f64>();
        }
    }

    /// Softmax probabilities for one row.
    pub fn probabilities(&self, x: &[f32]) -> Result<Vec<f64>, LearnerError> {
        self.check_dim(x.len())?;
        let mut p = vec![0.0; self.classes()];
        self.logits_into(x, &mut p);
        softmax_in_place(&mut p);
        Ok(p)
    }

    fn check_dim(&self, found: usize) -> Result<(), LearnerError> {
        if found != self.dim {
            return Err(LearnerError::DimMismatch {
                expected: self.dim,
                found,
            });
        }
        Ok(())
    }

    /// Mean cross-entropy plus regularization, and its analytic gradient.
    pub fn loss_and_gradient(&self, xs: &[&[f32]], labels: &[usize]) -> Result<(f64, Gradients), LearnerError> {
        if xs.is_empty() {
            return Err(LearnerError::EmptyBatch);
        }
        if xs.len() != labels.len() {
            return Err(LearnerError::InvalidConfig(format!(
                "{} rows but {} labels",
                xs.len(),
                labels.len()
            )));
        }
        let c = self.classes();
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; c];
        let mut loss = 0.0;
        let mut p = vec![0.0; c];
        for (x, &y) in xs.iter().zip(labels) {
            self.check_dim(x.len())?;
            if y >= c {
                return Err(LearnerError::BadLabel(y));
            }
            self.logits_into(x, &mut p);
            loss += log_sum_exp(&p) - p[y];
            softmax_in_place(&mut p);
            p[y] -= 1.0;
            for (k, &delta) in p.iter().enumerate() {
                gb[k] += delta;
                let row = &mut gw[k * self.dim..(k + 1) * self.dim];
                for (g, &xv) in row.iter_mut().zip(x.iter()) {
                    *g += delta * xv as f64;
                }
            }
        }
        let n = xs.len() as f64;
        let sq: f64 = self.weights.iter().map(|w| w * w).sum();
        loss = loss / n + 0.5 * self.l2 * sq;
        for (g, &w) in gw.iter_mut().zip(&self.weights) {
            *g = *g / n + self.l2 * w;
        }
        gb.iter_mut().for_each(|g| *g /= n);
        Ok((loss, Gradients { weights: gw, bias: gb }))
    }

    fn step(&mut self, grads: &Gradients, lr: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            *w -= lr * g;
        }
        for (b, g) in self.bias.iter_mut().zip(&grads.bias) {
            *b -= lr * g;
        }
    }

    /// Argmax of softmax per row; ties go to the lowest vocabulary index.
    pub fn predict_store(&self, store: &EmbeddingStore) -> Result<Vec<(usize, Vec<f64>)>, LearnerError> {
        if store.count() > 0 {
            self.check_dim(store.dim())?;
        }
        Ok(store
            .rows()
            .map(|x| {
                let mut p = vec![0.0; self.classes()];
                self.logits_into(x, &mut p);
                softmax_in_place(&mut p);
                let mut best = 0;
                for (k, &v) in p.iter().enumerate() {
                    if v > p[best] {
                        best = k;
                    }
                }
                (best, p)
            })
            .collect())
    }

    pub fn predict(&self, bundle: &DatasetBundle) -> Result<Vec<Prediction>, LearnerError> {
        let rows = self.predict_store(bundle.store())?;
        Ok(bundle
            .records()
            .iter()
            .zip(rows)
            .map(|(r, (k, p))| Prediction {
                id: r.id.clone(),
                predicted_class: self.vocabulary.label(k).to_string(),
                scores: Some(p),
            })
            .collect())
    }

    /// Writes the header JSON `{vocabulary, dim, l2}` followed by weights and
    /// biases as little-endian `f64`, row-major.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LearnerError> {
        let header = serde_json::to_vec(&CheckpointHeader {
            vocabulary: self.vocabulary.clone(),
            dim: self.dim,
            l2: self.l2,
        })
        .map_err(|e| LearnerError::BadCheckpoint(e.to_string()))?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for v in self.weights.iter().chain(&self.bias) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LearnerError> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        let bad = |m: &str| LearnerError::BadCheckpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing WSCK magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header_end = 12 + hlen;
        if bytes.len() < header_end {
            return Err(bad("truncated header"));
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[12..header_end]).map_err(|e| bad(&e.to_string()))?;
        let c = header.vocabulary.len();
        let n = c * header.dim + c;
        let payload = &bytes[header_end..];
        if payload.len() != n * 8 {
            return Err(bad(&format!(
                "payload holds {} bytes, expected {}",
                payload.len(),
                n * 8
            )));
        }
        let mut values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let bias = values.split_off(c * header.dim);
        Self::from_parts(header.vocabulary, header.dim, values, bias, header.l2)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    vocabulary: ClassVocabulary,
    dim: usize,
    l2: f64,
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

fn labeled_rows<'a>(
    bundle: &'a DatasetBundle,
    vocabulary: &ClassVocabulary,
) -> Result<(Vec<&'a [f32]>, Vec<usize>), LearnerError> {
    let mut seen = vec![false; vocabulary.len()];
    let mut labels = Vec::with_capacity(bundle.len());
    for r in bundle.records() {
        let k = vocabulary
            .position(&r.true_class)
            .ok_or_else(|| LearnerError::UnknownClass(r.true_class.clone()))?;
        seen[k] = true;
        labels.push(k);
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(LearnerError::EmptyClass(vocabulary.label(k).to_string()));
    }
    Ok((bundle.store().rows().collect(), labels))
}

fn descend(
    model: &mut LinearClassifier,
    xs: &[&[f32]],
    labels: &[usize],
    config: &TrainConfig,
) -> Result<Vec<f64>, LearnerError> {
    let mut history = Vec::with_capacity(config.epochs + 1);
    for epoch in 0..config.epochs {
        let (loss, grads) = model.loss_and_gradient(xs, labels)?;
        if !loss.is_finite() {
            return Err(LearnerError::DivergedLoss(epoch));
        }
        history.push(loss);
        model.step(&grads, config.learning_rate);
    }
    let (loss, _) = model.loss_and_gradient(xs, labels)?;
    if !loss.is_finite() || model.weights.iter().chain(&model.bias).any(|v| !v.is_finite()) {
        return Err(LearnerError::DivergedLoss(config.epochs));
    }
    history.push(loss);
    Ok(history)
}

/// Trains from zero on every record of `bundle`. Returns the classifier and
/// the loss before each epoch's update plus the final loss.
pub fn train_with_history(
    bundle: &DatasetBundle,
    config: &TrainConfig,
) -> Result<(LinearClassifier, Vec<f64>), LearnerError> {
    config.validate()?;
    if bundle.is_empty() {
        return Err(LearnerError::EmptyBatch);
    }
    let vocab = bundle.vocabulary().clone();
    let (xs, labels) = labeled_rows(bundle, &vocab)?;
    let mut model = LinearClassifier::zeros(vocab, bundle.dim(), config.l2);
    let history = descend(&mut model, &xs, &labels, config)?;
    Ok((model, history))
}

pub fn train(bundle: &DatasetBundle, config: &TrainConfig) -> Result<LinearClassifier, LearnerError> {
    train_with_history(bundle, config).map(|(m, _)| m)
}

/// Continues training on `merged`. New classes get zero-initialized rows;
/// with `warm_start` off the parameters restart from zero.
pub fn finetune(
    classifier: &LinearClassifier,
    merged: &DatasetBundle,
    config: &TrainConfig,
) -> Result<LinearClassifier, LearnerError> {
    config.validate()?;
    if merged.is_empty() {
        return Err(LearnerError::EmptyBatch);
    }
    if merged.dim() != classifier.dim {
        return Err(LearnerError::DimMismatch {
            expected: classifier.dim,
            found: merged.dim(),
        });
    }
    let mut model = classifier.clone();
    model.l2 = config.l2;
    model.extend_vocabulary(merged.vocabulary());
    if !config.warm_start {
        model.weights.iter_mut().for_each(|w| *w = 0.0);
        model.bias.iter_mut().for_each(|b| *b = 0.0);
    }
    let (xs, labels) = labeled_rows(merged, &model.vocabulary)?;
    descend(&mut model, &xs, &labels, config)?;
    Ok(model)
}
