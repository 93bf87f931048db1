//! The per-node classifier head.
//!
//! A head is a three-layer perceptron `D -> H -> H -> 2` with ReLU between
//! layers and a softmax on the output. Output index 0 is the target class;
//! its probability is the positive score `phi`. Heads are trained with
//! minibatch SGD on the mean softmax cross-entropy, using classical
//! momentum and L2 weight decay on the weight matrices (biases are not
//! decayed).

use crate::features::FeatureVector;
use crate::rng::RngStream;
use nalgebra::{DMatrix, DMatrixView};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AppearanceError {
    #[error("feature length {actual} does not match head input {expected}")]
    Dim { expected: usize, actual: usize },
    #[error("training pool has no {0} examples")]
    EmptyClass(Label),
    #[error("invalid SGD hyperparameters: {0}")]
    Hyper(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    fn class(self) -> usize {
        match self {
            Label::Positive => 0,
            Label::Negative => 1,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub features: FeatureVector,
    pub label: Label,
    pub frame: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdHyper {
    pub learning_rate: f64,
    pub iterations: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_pos: usize,
    pub batch_neg: usize,
}

impl SgdHyper {
    /// First-frame training of the root head.
    pub fn initial() -> Self {
        Self {
            learning_rate: 0.001,
            iterations: 50,
            ..Self::online()
        }
    }

    /// Fine-tuning of every later head.
    pub fn online() -> Self {
        Self {
            learning_rate: 0.003,
            iterations: 10,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_pos: 32,
            batch_neg: 96,
        }
    }

    pub fn validate(&self) -> Result<(), AppearanceError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(AppearanceError::Hyper("learning rate must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(AppearanceError::Hyper("iterations must be at least 1".into()));
        }
        if self.batch_pos + self.batch_neg == 0 {
            return Err(AppearanceError::Hyper("empty minibatch".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(AppearanceError::Hyper("momentum in [0,1), decay >= 0".into()));
        }
        Ok(())
    }
}

/// Fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut RngStream) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut layer = Self::zeros(inputs, outputs);
        for w in &mut layer.weights {
            *w = rng.uniform_in(-a, a);
        }
        layer
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.bias))
        {
            *o = b + dot(row, x);
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Row-major `outputs x inputs` weights seen as the column-major
    /// `inputs x outputs` matrix, i.e. the transpose.
    fn weights_t(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.weights, self.inputs, self.outputs)
    }

    /// `x * W^T + b` for a batch of row vectors.
    fn forward_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * self.weights_t();
        for (mut col, b) in z.column_iter_mut().zip(&self.bias) {
            col.add_scalar_mut(*b);
        }
        z
    }

    /// Adds `delta^T * input` and the column sums of `delta` into `g`.
    fn accumulate_batch(&self, g: &mut Dense, delta: &DMatrix<f64>, input: &DMatrix<f64>) {
        let gw = input.tr_mul(delta);
        // gw is inputs x outputs column-major, which is the row-major layout
        for (w, v) in g.weights.iter_mut().zip(gw.as_slice()) {
            *w += v;
        }
        for (b, col) in g.bias.iter_mut().zip(delta.column_iter()) {
            *b += col.sum();
        }
    }

    /// Propagates `delta` back through this layer and the ReLU whose
    /// pre-activation was `z_in`.
    fn backprop_batch(&self, delta: &DMatrix<f64>, z_in: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = delta * self.weights_t().transpose();
        out.zip_apply(z_in, |o, z| {
            if z <= 0.0 {
                *o = 0.0;
            }
        });
        out
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Feature vectors as the rows of a matrix.
fn stack(features: &[&FeatureVector]) -> DMatrix<f64> {
    let d = features.first().map_or(0, |f| f.dim());
    DMatrix::from_fn(features.len(), d, |i, j| features[i].as_slice()[j])
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four independent accumulators; fixed order keeps results reproducible
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Two-class classifier head. Cloning gives a fully independent copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppearanceHead {
    pub layers: [Dense; 3],
}

/// Same shape as a head; holds derivatives of the loss.
pub type HeadGradient = AppearanceHead;

impl AppearanceHead {
    pub fn new_random(input_dim: usize, hidden: usize, rng: &mut RngStream) -> Self {
        Self {
            layers: [
                Dense::glorot(input_dim, hidden, rng),
                Dense::glorot(hidden, hidden, rng),
                Dense::glorot(hidden, 2, rng),
            ],
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            layers: [
                Dense::zeros(input_dim, hidden),
                Dense::zeros(hidden, hidden),
                Dense::zeros(hidden, 2),
            ],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Parameters in the order w1, b1, w2, b2, w3, b3.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    /// Inverse of [`flat_params`](Self::flat_params) for a head of the
    /// given shape.
    pub fn from_flat(input_dim: usize, hidden: usize, flat: &[f64]) -> Option<Self> {
        let mut head = Self::zeros(input_dim, hidden);
        if flat.len() != head.param_count() {
            return None;
        }
        let mut rest = flat;
        for l in &mut head.layers {
            let (w, r) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, r) = r.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = r;
        }
        Some(head)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    fn check_dim(&self, f: &FeatureVector) -> Result<(), AppearanceError> {
        if f.dim() != self.input_dim() {
            return Err(AppearanceError::Dim {
                expected: self.input_dim(),
                actual: f.dim(),
            });
        }
        Ok(())
    }

    fn forward(&self, x: &[f64]) -> [f64; 2] {
        let [l1, l2, l3] = &self.layers;
        let mut h1 = vec![0.0; l1.outputs];
        l1.forward(x, &mut h1);
        h1.iter_mut().for_each(|v| *v = relu(*v));
        let mut h2 = vec![0.0; l2.outputs];
        l2.forward(&h1, &mut h2);
        h2.iter_mut().for_each(|v| *v = relu(*v));
        let mut logits = [0.0; 2];
        l3.forward(&h2, &mut logits);
        softmax2(logits)
    }

    /// `[phi, 1 - phi]` for one feature vector.
    pub fn probabilities(&self, f: &FeatureVector) -> Result<[f64; 2], AppearanceError> {
        self.check_dim(f)?;
        Ok(self.forward(f.as_slice()))
    }

    /// Positive-class score `phi` in `[0, 1]`.
    pub fn score(&self, f: &FeatureVector) -> Result<f64, AppearanceError> {
        Ok(self.probabilities(f)?[0])
    }

    /// Mean softmax cross-entropy over `batch`.
    pub fn loss(&self, batch: &[&TrainingExample]) -> Result<f64, AppearanceError> {
        let mut total = 0.0;
        for ex in batch {
            self.check_dim(&ex.features)?;
            let p = self.forward(ex.features.as_slice())[ex.label.class()];
            total -= p.max(f64::MIN_POSITIVE).ln();
        }
        Ok(total / batch.len().max(1) as f64)
    }

    /// Positive scores for a batch of feature vectors, computed with
    /// matrix products. Agrees with [`score`](Self::score) up to rounding.
    pub fn score_batch(&self, features: &[&FeatureVector]) -> Result<Vec<f64>, AppearanceError> {
        for f in features {
            self.check_dim(f)?;
        }
        if features.is_empty() {
            return Ok(Vec::new());
        }
        let x = stack(features);
        let [_, _, logits] = self.forward_batch(&x);
        Ok(logits
            .row_iter()
            .map(|r| softmax2([r[0], r[1]])[0])
            .collect())
    }

    /// Pre-activations of all three layers for the rows of `x`.
    fn forward_batch(&self, x: &DMatrix<f64>) -> [DMatrix<f64>; 3] {
        let [l1, l2, l3] = &self.layers;
        let z1 = l1.forward_batch(x);
        let z2 = l2.forward_batch(&z1.map(relu));
        let z3 = l3.forward_batch(&z2.map(relu));
        [z1, z2, z3]
    }

    /// Exact gradient of [`loss`](Self::loss) with respect to every weight
    /// and bias.
    pub fn gradient(&self, batch: &[&TrainingExample]) -> Result<HeadGradient, AppearanceError> {
        for ex in batch {
            self.check_dim(&ex.features)?;
        }
        let [l1, l2, l3] = &self.layers;
        let mut g = Self::zeros(self.input_dim(), self.hidden());
        if batch.is_empty() {
            return Ok(g);
        }
        let scale = 1.0 / batch.len() as f64;
        let feats: Vec<&FeatureVector> = batch.iter().map(|e| &e.features).collect();
        let x = stack(&feats);
        let [z1, z2, z3] = self.forward_batch(&x);
        let (a1, a2) = (z1.map(relu), z2.map(relu));
        // dL/dlogits = (p - onehot) / n
        let mut d3 = DMatrix::zeros(batch.len(), 2);
        for (i, ex) in batch.iter().enumerate() {
            let p = softmax2([z3[(i, 0)], z3[(i, 1)]]);
            for c in 0..2 {
                let y = if c == ex.label.class() { 1.0 } else { 0.0 };
                d3[(i, c)] = (p[c] - y) * scale;
            }
        }
        l3.accumulate_batch(&mut g.layers[2], &d3, &a2);
        let d2 = l3.backprop_batch(&d3, &z2);
        l2.accumulate_batch(&mut g.layers[1], &d2, &a1);
        let d1 = l2.backprop_batch(&d2, &z1);
        l1.accumulate_batch(&mut g.layers[0], &d1, &x);
        Ok(g)
    }

    /// Runs `hyper.iterations` minibatch SGD steps on `pool`.
    ///
    /// Each step draws `batch_pos` positives and `batch_neg` negatives:
    /// without replacement when the class pool is large enough, with
    /// replacement otherwise. The update is
    /// `v = momentum * v - lr * (grad + decay * w); w += v`.
    pub fn train(
        &mut self,
        pool: &[TrainingExample],
        hyper: &SgdHyper,
        rng: &mut RngStream,
    ) -> Result<(), AppearanceError> {
        hyper.validate()?;
        let pos: Vec<&TrainingExample> = pool.iter().filter(|e| e.label == Label::Positive).collect();
        let neg: Vec<&TrainingExample> = pool.iter().filter(|e| e.label == Label::Negative).collect();
        if pos.is_empty() && hyper.batch_pos > 0 {
            return Err(AppearanceError::EmptyClass(Label::Positive));
        }
        if neg.is_empty() && hyper.batch_neg > 0 {
            return Err(AppearanceError::EmptyClass(Label::Negative));
        }
        if let Some(ex) = pool.iter().find(|e| e.features.dim() != self.input_dim()) {
            return Err(AppearanceError::Dim {
                expected: self.input_dim(),
                actual: ex.features.dim(),
            });
        }
        let mut velocity = Self::zeros(self.input_dim(), self.hidden());
        let mut batch = Vec::with_capacity(hyper.batch_pos + hyper.batch_neg);
        for _ in 0..hyper.iterations {
            batch.clear();
            draw_batch(&pos, hyper.batch_pos, rng, &mut batch);
            draw_batch(&neg, hyper.batch_neg, rng, &mut batch);
            let grad = self.gradient(&batch)?;
            for ((layer, vel), g) in self
                .layers
                .iter_mut()
                .zip(velocity.layers.iter_mut())
                .zip(grad.layers.iter())
            {
                for ((w, v), gw) in layer.weights.iter_mut().zip(&mut vel.weights).zip(&g.weights) {
                    *v = hyper.momentum * *v - hyper.learning_rate * (gw + hyper.weight_decay * *w);
                    *w += *v;
                }
                for ((b, v), gb) in layer.bias.iter_mut().zip(&mut vel.bias).zip(&g.bias) {
                    *v = hyper.momentum * *v - hyper.learning_rate * gb;
                    *b += *v;
                }
            }
        }
        Ok(())
    }
}

fn draw_batch<'a>(
    class: &[&'a TrainingExample],
    n: usize,
    rng: &mut RngStream,
    out: &mut Vec<&'a TrainingExample>,
) {
    if n == 0 {
        return;
    }
    if class.len() >= n {
        // partial Fisher-Yates over indices
        let mut idx: Vec<usize> = (0..class.len()).collect();
        for i in 0..n {
            let j = i + rng.below(class.len() - i);
            idx.swap(i, j);
            out.push(class[idx[i]]);
        }
    } else {
        out.extend((0..n).map(|_| class[rng.below(class.len())]));
    }
}

fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}
