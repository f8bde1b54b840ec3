//! Two-layer probabilistic classifier with Monte-Carlo dropout.
//!
//! `input -> 128 ReLU -> dropout -> m softmax`. Dropout is inverted: kept
//! hidden units are scaled by `1 / (1 - rate)` whenever a mask is applied, so
//! the deterministic network is the expectation of the stochastic one and
//! needs no rescaling. Masks are drawn during training and for stochastic
//! (MC) queries, never in deterministic mode.

use std::io::{self, Read, Write};

use rand::seq::SliceRandom;
use rand::Rng as _;
use thiserror::Error;

use crate::seed::{self, stream};
use crate::sensor_sim::ClassId;

/// Hidden layer width.
pub const HIDDEN_UNITS: usize = 128;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input has {got} features, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("label {label} outside 1..={classes}")]
    LabelOutOfRange { label: ClassId, classes: usize },
    #[error("invalid model setting: {0}")]
    InvalidConfig(String),
    #[error("prediction tensor is not a probability simplex at query {query}, sample {sample}")]
    NotSimplex { query: usize, sample: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Inference mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Deterministic,
    /// Fresh dropout mask drawn from the given seed.
    Stochastic(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Upper bound on the mini-batch size; the dataset size caps it.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, learning_rate: 0.05, batch_size: 16, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 {
            return Err(ModelError::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidConfig(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// A labeled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: ClassId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    input: usize,
    hidden: usize,
    classes: usize,
    dropout_rate: f64,
    /// Flat parameters: `w1` (hidden x input, row per hidden unit), `b1`,
    /// `w2` (classes x hidden, row per class), `b2`.
    params: Vec<f64>,
}

/// Activations kept for back-propagation.
struct Pass {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl MlpClassifier {
    /// Builds a model with Glorot-uniform weights and zero biases.
    pub fn new(input: usize, classes: usize, dropout_rate: f64, seed: u64) -> Result<Self, ModelError> {
        Self::with_hidden(input, HIDDEN_UNITS, classes, dropout_rate, seed)
    }

    pub fn with_hidden(
        input: usize,
        hidden: usize,
        classes: usize,
        dropout_rate: f64,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let mut model = Self::zeros(input, hidden, classes, dropout_rate)?;
        let mut rng = seed::rng(seed);
        let l1 = (6.0 / (input + hidden) as f64).sqrt();
        let l2 = (6.0 / (hidden + classes) as f64).sqrt();
        let (w1, w2) = (model.w1_range(), model.w2_range());
        for p in &mut model.params[w1] {
            *p = rng.random_range(-l1..l1);
        }
        for p in &mut model.params[w2] {
            *p = rng.random_range(-l2..l2);
        }
        Ok(model)
    }

    /// All-zero weights and biases.
    pub fn zeros(input: usize, hidden: usize, classes: usize, dropout_rate: f64) -> Result<Self, ModelError> {
        if input == 0 || hidden == 0 || classes == 0 {
            return Err(ModelError::InvalidConfig("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(ModelError::InvalidConfig(format!("dropout rate must be in [0, 1), got {dropout_rate}")));
        }
        let n = hidden * input + hidden + classes * hidden + classes;
        Ok(Self { input, hidden, classes, dropout_rate, params: vec![0.0; n] })
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<(), ModelError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(ModelError::InvalidConfig(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        self.dropout_rate = rate;
        Ok(())
    }

    /// Flat parameter vector (see the struct layout).
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn w1_range(&self) -> std::ops::Range<usize> {
        0..self.hidden * self.input
    }

    fn b1_range(&self) -> std::ops::Range<usize> {
        let s = self.hidden * self.input;
        s..s + self.hidden
    }

    fn w2_range(&self) -> std::ops::Range<usize> {
        let s = self.b1_range().end;
        s..s + self.classes * self.hidden
    }

    fn b2_range(&self) -> std::ops::Range<usize> {
        let s = self.w2_range().end;
        s..s + self.classes
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.input {
            return Err(ModelError::DimensionMismatch { expected: self.input, got: x.len() });
        }
        Ok(())
    }

    /// Inverted-dropout mask: 0 for dropped units, `1 / (1 - rate)` otherwise.
    pub fn draw_mask<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let keep = 1.0 / (1.0 - self.dropout_rate);
        (0..self.hidden)
            .map(|_| if rng.random::<f64>() < self.dropout_rate { 0.0 } else { keep })
            .collect()
    }

    fn pass(&self, x: &[f64], mask: Option<&[f64]>) -> Pass {
        let w1 = &self.params[self.w1_range()];
        let b1 = &self.params[self.b1_range()];
        let w2 = &self.params[self.w2_range()];
        let b2 = &self.params[self.b2_range()];
        let mut pre = Vec::with_capacity(self.hidden);
        let mut hidden = Vec::with_capacity(self.hidden);
        for h in 0..self.hidden {
            let row = &w1[h * self.input..(h + 1) * self.input];
            let z = b1[h] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            pre.push(z);
            let a = z.max(0.0);
            hidden.push(match mask {
                Some(m) => a * m[h],
                None => a,
            });
        }
        let mut logits: Vec<f64> = (0..self.classes)
            .map(|c| {
                let row = &w2[c * self.hidden..(c + 1) * self.hidden];
                b2[c] + row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        softmax_in_place(&mut logits);
        Pass { pre, hidden, probs: logits }
    }

    /// Class probabilities for one input.
    pub fn forward(&self, x: &[f64], mode: Mode) -> Result<Vec<f64>, ModelError> {
        self.check_input(x)?;
        Ok(match mode {
            Mode::Deterministic => self.pass(x, None).probs,
            Mode::Stochastic(seed) => {
                let mask = self.draw_mask(&mut seed::rng(seed));
                self.pass(x, Some(&mask)).probs
            }
        })
    }

    /// Forward pass with an explicit dropout mask (`None` for no dropout).
    pub fn forward_with_mask(&self, x: &[f64], mask: Option<&[f64]>) -> Result<Vec<f64>, ModelError> {
        self.check_input(x)?;
        Ok(self.pass(x, mask).probs)
    }

    /// Cross-entropy loss of one example and its gradient with respect to
    /// [`params`](Self::params), under a fixed mask.
    pub fn loss_and_gradient(
        &self,
        x: &[f64],
        label: ClassId,
        mask: Option<&[f64]>,
    ) -> Result<(f64, Vec<f64>), ModelError> {
        self.check_input(x)?;
        self.check_label(label)?;
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.accumulate_gradient(x, label.index(), mask, 1.0, &mut grad);
        Ok((loss, grad))
    }

    /// Cross-entropy of one example under a fixed mask.
    pub fn loss(&self, x: &[f64], label: ClassId, mask: Option<&[f64]>) -> Result<f64, ModelError> {
        self.check_input(x)?;
        self.check_label(label)?;
        Ok(cross_entropy(&self.pass(x, mask).probs, label.index()))
    }

    fn check_label(&self, label: ClassId) -> Result<(), ModelError> {
        if label.0 == 0 || label.index() >= self.classes {
            return Err(ModelError::LabelOutOfRange { label, classes: self.classes });
        }
        Ok(())
    }

    /// Adds `scale * dloss/dparams` into `grad`; returns the loss.
    fn accumulate_gradient(&self, x: &[f64], target: usize, mask: Option<&[f64]>, scale: f64, grad: &mut [f64]) -> f64 {
        let pass = self.pass(x, mask);
        let loss = cross_entropy(&pass.probs, target);
        let (w1r, b1r, w2r, b2r) = (self.w1_range(), self.b1_range(), self.w2_range(), self.b2_range());
        let w2 = &self.params[w2r.clone()];

        let mut d_hidden = vec![0.0; self.hidden];
        for c in 0..self.classes {
            let dz = (pass.probs[c] - if c == target { 1.0 } else { 0.0 }) * scale;
            grad[b2r.start + c] += dz;
            let g_row = &mut grad[w2r.start + c * self.hidden..w2r.start + (c + 1) * self.hidden];
            let w_row = &w2[c * self.hidden..(c + 1) * self.hidden];
            for h in 0..self.hidden {
                g_row[h] += dz * pass.hidden[h];
                d_hidden[h] += dz * w_row[h];
            }
        }
        for h in 0..self.hidden {
            if pass.pre[h] <= 0.0 {
                continue;
            }
            let dz = d_hidden[h] * mask.map_or(1.0, |m| m[h]);
            if dz == 0.0 {
                continue;
            }
            grad[b1r.start + h] += dz;
            let g_row = &mut grad[w1r.start + h * self.input..w1r.start + (h + 1) * self.input];
            for (g, v) in g_row.iter_mut().zip(x) {
                *g += dz * v;
            }
        }
        loss
    }

    /// Mean loss and gradient over a batch with the given masks.
    pub fn batch_gradient(
        &self,
        batch: &[&Example],
        masks: &[Option<Vec<f64>>],
    ) -> Result<(f64, Vec<f64>), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        let mut grad = vec![0.0; self.params.len()];
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for (ex, mask) in batch.iter().zip(masks) {
            self.check_input(&ex.features)?;
            self.check_label(ex.label)?;
            loss += self.accumulate_gradient(&ex.features, ex.label.index(), mask.as_deref(), scale, &mut grad);
        }
        Ok((loss * scale, grad))
    }

    /// Mini-batch SGD on mean cross-entropy with dropout active.
    ///
    /// Returns the mean training loss of every epoch, measured on the
    /// stochastic forward passes used for the updates.
    pub fn train(&mut self, data: &[Example], config: &TrainConfig) -> Result<Vec<f64>, ModelError> {
        config.validate()?;
        if data.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        for ex in data {
            self.check_input(&ex.features)?;
            self.check_label(ex.label)?;
        }
        let batch_size = config.batch_size.min(data.len());
        let mut rng = seed::rng(seed::derive(config.seed, stream::TRAIN, 0));
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut trace = Vec::with_capacity(config.epochs);
        let mut grad = vec![0.0; self.params.len()];
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let scale = 1.0 / chunk.len() as f64;
                for &i in chunk {
                    let mask = (self.dropout_rate > 0.0).then(|| self.draw_mask(&mut rng));
                    let ex = &data[i];
                    epoch_loss += self.accumulate_gradient(&ex.features, ex.label.index(), mask.as_deref(), scale, &mut grad);
                }
                for (p, g) in self.params.iter_mut().zip(&grad) {
                    *p -= config.learning_rate * g;
                }
            }
            trace.push(epoch_loss / data.len() as f64);
        }
        Ok(trace)
    }

    /// Mean deterministic cross-entropy over a dataset.
    pub fn mean_loss(&self, data: &[Example]) -> Result<f64, ModelError> {
        if data.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        let mut total = 0.0;
        for ex in data {
            total += self.loss(&ex.features, ex.label, None)?;
        }
        Ok(total / data.len() as f64)
    }

    /// Deterministic class prediction; ties go to the lowest class id.
    pub fn predict(&self, x: &[f64]) -> Result<ClassId, ModelError> {
        let probs = self.forward(x, Mode::Deterministic)?;
        Ok(ClassId::from_index(argmax(&probs)))
    }

    /// `n` stochastic passes over each test input.
    pub fn predict_mc(&self, inputs: &[Vec<f64>], n: usize, seed: u64) -> Result<PredictionSet, ModelError> {
        if n == 0 || inputs.is_empty() {
            return Err(ModelError::InvalidConfig("need at least one query and one test sample".into()));
        }
        let mut probs = Vec::with_capacity(inputs.len() * n * self.classes);
        let mut rng = seed::rng(seed::derive(seed, stream::MC, 0));
        for x in inputs {
            self.check_input(x)?;
            for _ in 0..n {
                let mask = self.draw_mask(&mut rng);
                probs.extend(self.pass(x, Some(&mask)).probs);
            }
        }
        PredictionSet::new(self.classes, n, inputs.len(), probs)
    }

    /// Fraction of test examples whose deterministic prediction matches the label.
    pub fn evaluate_accuracy(&self, test: &[Example]) -> Result<f64, ModelError> {
        if test.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        let mut correct = 0usize;
        for ex in test {
            if self.predict(&ex.features)? == ex.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / test.len() as f64)
    }

    /// Writes the versioned little-endian checkpoint.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<(), ModelError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for d in [self.input, self.hidden, self.classes] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&self.dropout_rate.to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Self, ModelError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(ModelError::Checkpoint(format!("bad magic {magic:?}")));
        }
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        let version = u16::from_le_bytes(b2);
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut b4 = [0u8; 4];
            r.read_exact(&mut b4)?;
            *d = u32::from_le_bytes(b4) as usize;
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let dropout = f64::from_le_bytes(b8);
        let mut model = Self::zeros(dims[0], dims[1], dims[2], dropout)?;
        for p in &mut model.params {
            r.read_exact(&mut b8)?;
            *p = f64::from_le_bytes(b8);
        }
        if model.params.iter().any(|p| !p.is_finite()) {
            return Err(ModelError::Checkpoint("non-finite weight".into()));
        }
        Ok(model)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HMLP";
pub const CHECKPOINT_VERSION: u16 = 1;

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn cross_entropy(probs: &[f64], target: usize) -> f64 {
    -probs[target].max(f64::MIN_POSITIVE).ln()
}

/// Index of the largest value; the first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// MC-dropout predictions `p[i][j][k]` for class `i`, query `j`, test sample `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    classes: usize,
    queries: usize,
    samples: usize,
    /// Layout `[k][j][i]`.
    probs: Vec<f64>,
}

impl PredictionSet {
    /// Wraps probabilities laid out sample-major, then query, then class.
    pub fn new(classes: usize, queries: usize, samples: usize, probs: Vec<f64>) -> Result<Self, ModelError> {
        if classes == 0 || queries == 0 || samples == 0 {
            return Err(ModelError::InvalidConfig("prediction set dimensions must be positive".into()));
        }
        if probs.len() != classes * queries * samples {
            return Err(ModelError::DimensionMismatch { expected: classes * queries * samples, got: probs.len() });
        }
        let set = Self { classes, queries, samples, probs };
        for k in 0..samples {
            for j in 0..queries {
                let col = set.column(j, k);
                let sum: f64 = col.iter().sum();
                if col.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
                    return Err(ModelError::NotSimplex { query: j, sample: k });
                }
            }
        }
        Ok(set)
    }

    /// Number of classes `m`.
    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Number of stochastic queries `n`.
    pub fn queries(&self) -> usize {
        self.queries
    }

    /// Number of test samples `l`.
    pub fn samples(&self) -> usize {
        self.samples
    }

    #[inline]
    pub fn p(&self, class: usize, query: usize, sample: usize) -> f64 {
        self.probs[(sample * self.queries + query) * self.classes + class]
    }

    /// Probability vector of one query on one sample.
    pub fn column(&self, query: usize, sample: usize) -> &[f64] {
        let s = (sample * self.queries + query) * self.classes;
        &self.probs[s..s + self.classes]
    }

    /// All `n * l` entries for one class.
    pub fn class_entries(&self, class: usize) -> impl Iterator<Item = f64> + '_ {
        self.probs.iter().skip(class).step_by(self.classes).copied()
    }
}

/// Per-dimension z-scoring fitted on a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    /// `None` for zero-variance dimensions, which pass through unchanged.
    scale: Vec<Option<f64>>,
}

impl Standardizer {
    pub fn fit<'a, I>(rows: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let Some(first) = rows.first() else { return Err(ModelError::EmptyDataset) };
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            if r.len() != dim {
                return Err(ModelError::DimensionMismatch { expected: dim, got: r.len() });
            }
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(*r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                (sd > 1e-12).then_some(sd)
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| match s {
                Some(s) => (v - m) / s,
                None => *v,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, dim: usize, classes: usize, seed: u64) -> Vec<Example> {
        let mut rng = seed::rng(seed);
        (0..n)
            .map(|i| {
                let label = ClassId::from_index(i % classes);
                let features = (0..dim)
                    .map(|d| rng.random_range(-1.0..1.0) + if d % classes == label.index() { 1.5 } else { 0.0 })
                    .collect();
                Example { features, label }
            })
            .collect()
    }

    #[test]
    fn zero_dropout_stochastic_equals_deterministic() {
        let m = MlpClassifier::new(6, 3, 0.0, 1).unwrap();
        let x = [0.3, -0.2, 0.5, 1.0, -1.0, 0.0];
        assert_eq!(m.forward(&x, Mode::Deterministic).unwrap(), m.forward(&x, Mode::Stochastic(99)).unwrap());
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = MlpClassifier::zeros(4, 8, 5, 0.2).unwrap();
        for p in m.forward(&[1.0, 2.0, 3.0, 4.0], Mode::Deterministic).unwrap() {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn outputs_are_simplexes() {
        let m = MlpClassifier::new(5, 4, 0.3, 3).unwrap();
        let mut rng = seed::rng(5);
        for s in 0..50 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-10.0..10.0)).collect();
            for mode in [Mode::Deterministic, Mode::Stochastic(s)] {
                let p = m.forward(&x, mode).unwrap();
                assert!(p.iter().all(|&v| v >= 0.0));
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dimension_and_label_errors() {
        let m = MlpClassifier::new(3, 2, 0.1, 0).unwrap();
        assert!(matches!(m.forward(&[1.0], Mode::Deterministic), Err(ModelError::DimensionMismatch { expected: 3, got: 1 })));
        assert!(matches!(m.loss(&[0.0; 3], ClassId(3), None), Err(ModelError::LabelOutOfRange { .. })));
        assert!(MlpClassifier::new(3, 2, 1.0, 0).is_err());
        let mut m = m;
        assert!(matches!(m.train(&[], &TrainConfig::default()), Err(ModelError::EmptyDataset)));
    }

    #[test]
    fn memorizes_a_single_sample() {
        let data = toy(1, 10, 3, 2);
        let mut m = MlpClassifier::new(10, 3, 0.2, 4).unwrap();
        let trace = m.train(&data, &TrainConfig { epochs: 200, ..TrainConfig::default() }).unwrap();
        assert_eq!(trace.len(), 200);
        assert!(*trace.last().unwrap() < 0.01, "final loss {}", trace.last().unwrap());
        assert_eq!(m.evaluate_accuracy(&data).unwrap(), 1.0);
    }

    #[test]
    fn training_is_reproducible() {
        let data = toy(20, 8, 4, 7);
        let cfg = TrainConfig { epochs: 15, seed: 11, ..TrainConfig::default() };
        let mut a = MlpClassifier::new(8, 4, 0.2, 1).unwrap();
        let mut b = a.clone();
        let ta = a.train(&data, &cfg).unwrap();
        let tb = b.train(&data, &cfg).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a, b);
    }

    #[test]
    fn longer_training_never_ends_higher() {
        let data = toy(12, 6, 3, 8);
        let base = MlpClassifier::new(6, 3, 0.0, 5).unwrap();
        let mut last = f64::INFINITY;
        for epochs in [10, 20, 40, 80, 160] {
            let mut m = base.clone();
            m.train(&data, &TrainConfig { epochs, seed: 3, ..TrainConfig::default() }).unwrap();
            let loss = m.mean_loss(&data).unwrap();
            assert!(loss <= last + 1e-12, "{epochs}: {loss} > {last}");
            last = loss;
        }
    }

    #[test]
    fn duplicated_batch_has_identical_gradient() {
        let data = toy(4, 5, 2, 9);
        let m = MlpClassifier::new(5, 2, 0.0, 2).unwrap();
        let once: Vec<&Example> = data.iter().collect();
        let twice: Vec<&Example> = data.iter().flat_map(|e| [e, e]).collect();
        let (l1, g1) = m.batch_gradient(&once, &vec![None; once.len()]).unwrap();
        let (l2, g2) = m.batch_gradient(&twice, &vec![None; twice.len()]).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut m = MlpClassifier::with_hidden(7, 16, 4, 0.3, 21).unwrap();
        let mut rng = seed::rng(77);
        let x: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mask = m.draw_mask(&mut rng);
        let label = ClassId(2);
        let (_, grad) = m.loss_and_gradient(&x, label, Some(&mask)).unwrap();
        let h = 1e-6;
        for _ in 0..10 {
            let i = rng.random_range(0..m.params().len());
            let orig = m.params()[i];
            m.params_mut()[i] = orig + h;
            let up = m.loss(&x, label, Some(&mask)).unwrap();
            m.params_mut()[i] = orig - h;
            let down = m.loss(&x, label, Some(&mask)).unwrap();
            m.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let denom = grad[i].abs().max(numeric.abs());
            if denom > 1e-8 {
                assert!((grad[i] - numeric).abs() / denom < 1e-4, "param {i}: {} vs {numeric}", grad[i]);
            } else {
                assert!((grad[i] - numeric).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn mc_predictions_shape_and_spread() {
        let data = toy(30, 6, 3, 1);
        let mut m = MlpClassifier::new(6, 3, 0.2, 6).unwrap();
        m.train(&data, &TrainConfig { epochs: 30, ..TrainConfig::default() }).unwrap();
        let xs: Vec<Vec<f64>> = data.iter().take(4).map(|e| e.features.clone()).collect();
        let preds = m.predict_mc(&xs, 10, 3).unwrap();
        assert_eq!((preds.classes(), preds.queries(), preds.samples()), (3, 10, 4));
        let spread = (0..3).any(|i| {
            let v: Vec<f64> = preds.class_entries(i).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().any(|p| (p - mean).abs() > 1e-9)
        });
        assert!(spread);
        assert_eq!(m.predict_mc(&xs, 1, 3).unwrap().queries(), 1);

        m.set_dropout_rate(0.0).unwrap();
        let preds = m.predict_mc(&xs, 5, 3).unwrap();
        for k in 0..4 {
            for j in 1..5 {
                assert_eq!(preds.column(j, k), preds.column(0, k));
            }
        }
    }

    #[test]
    fn constant_predictor_accuracy() {
        let m = MlpClassifier::zeros(3, 4, 5, 0.2).unwrap();
        let test: Vec<Example> = (0..10)
            .map(|i| Example { features: vec![i as f64; 3], label: ClassId::from_index(i % 5) })
            .collect();
        // Ties resolve to class 1, which is 2 of 10 labels.
        assert_eq!(m.evaluate_accuracy(&test).unwrap(), 0.2);
    }

    #[test]
    fn checkpoint_round_trip_and_header() {
        let m = MlpClassifier::with_hidden(3, 4, 2, 0.25, 8).unwrap();
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"HMLP");
        assert_eq!(&buf[6..10], &3u32.to_le_bytes());
        assert_eq!(buf.len(), 4 + 2 + 12 + 8 + 8 * m.params().len());
        assert_eq!(MlpClassifier::read_checkpoint(&mut buf.as_slice()).unwrap(), m);
        buf[0] = b'X';
        assert!(MlpClassifier::read_checkpoint(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn prediction_set_validation() {
        assert!(PredictionSet::new(2, 1, 1, vec![0.5, 0.5]).is_ok());
        assert!(matches!(PredictionSet::new(2, 1, 1, vec![0.7, 0.5]), Err(ModelError::NotSimplex { .. })));
        assert!(PredictionSet::new(2, 1, 1, vec![0.5]).is_err());
        let p = PredictionSet::new(2, 2, 1, vec![0.1, 0.9, 0.3, 0.7]).unwrap();
        assert_eq!(p.p(1, 1, 0), 0.7);
        assert_eq!(p.class_entries(0).collect::<Vec<_>>(), vec![0.1, 0.3]);
    }

    #[test]
    fn standardizer_scales_and_passes_constants() {
        let rows = [vec![1.0, 5.0, 0.0], vec![3.0, 5.0, 2.0]];
        let s = Standardizer::fit(rows.iter().map(Vec::as_slice)).unwrap();
        assert_eq!(s.transform(&[2.0, 5.0, 1.0]), vec![0.0, 5.0, 0.0]);
        assert_eq!(s.transform(&[3.0, 7.0, 2.0]), vec![1.0, 7.0, 1.0]);
    }
}
