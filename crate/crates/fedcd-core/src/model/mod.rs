//! Feed-forward softmax classifier trained by mini-batch SGD.
//!
//! Parameters live in one flat `f64` vector, laid out layer by layer:
//! the weight matrix first (row-major, one row per output unit), then
//! the bias vector. Hidden layers use the configured activation; the
//! output layer is always a softmax over the class count.

pub mod quant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use quant::{payload_bytes, quantize_weights, QuantizationSpec};

/// Hidden-layer activation function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Architecture descriptor: layer sizes from input dim to class count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    layer_sizes: Vec<usize>,
    activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least input and output layers, got {}",
                layer_sizes.len()
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidSpec("layer sizes must be >= 1".into()));
        }
        Ok(Self { layer_sizes, activation })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().expect("validated: >= 2 layers")
    }

    /// `(fan_in, fan_out)` per layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        self.layer_sizes.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Total parameter count: sum of `fan_in * fan_out + fan_out`.
    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// A model's full parameter state: spec plus flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    spec: MlpSpec,
    params: Vec<f64>,
}

impl ModelWeights {
    /// Wrap an existing parameter vector, checking length and finiteness.
    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        if params.len() != spec.param_count() {
            return Err(Error::InvalidSpec(format!(
                "expected {} parameters, got {}",
                spec.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidSpec("non-finite parameter".into()));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }
}

/// A batch of feature rows with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch {
    features: Vec<f64>,
    feature_dim: usize,
    labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(features: Vec<f64>, feature_dim: usize, labels: Vec<usize>) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::InvalidSpec("feature_dim must be >= 1".into()));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::DimensionMismatch(format!(
                "{} feature values for {} rows of dim {}",
                features.len(),
                labels.len(),
                feature_dim
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidSpec("non-finite feature value".into()));
        }
        Ok(Self { features, feature_dim, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// New batch holding the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> LabeledBatch {
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        LabeledBatch { features, feature_dim: self.feature_dim, labels }
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_weights<R: Rng>(spec: &MlpSpec, rng: &mut R) -> ModelWeights {
    let mut params = Vec::with_capacity(spec.param_count());
    for (fan_in, fan_out) in spec.layer_dims() {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            params.push(rng.random_range(-a..a));
        }
        for _ in 0..fan_out {
            params.push(0.0);
        }
    }
    ModelWeights { spec: spec.clone(), params }
}

fn check_batch_dims(w: &ModelWeights, batch: &LabeledBatch) -> Result<()> {
    if batch.feature_dim() != w.spec.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "batch feature dim {} vs model input dim {}",
            batch.feature_dim(),
            w.spec.input_dim()
        )));
    }
    let classes = w.spec.class_count();
    if let Some(&bad) = batch.labels().iter().find(|&&l| l >= classes) {
        return Err(Error::DimensionMismatch(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Per-layer activations for one example, input row included first.
fn run_layers(spec: &MlpSpec, params: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
    let dims = spec.layer_dims();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(dims.len() + 1);
    acts.push(x.to_vec());
    let mut offset = 0;
    for (li, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let weights = &params[offset..offset + fan_in * fan_out];
        let biases = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        offset += fan_in * fan_out + fan_out;
        let prev = acts.last().expect("input pushed above");
        let mut z = vec![0.0; fan_out];
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &weights[o * fan_in..(o + 1) * fan_in];
            let mut acc = biases[o];
            for (wi, xi) in row.iter().zip(prev.iter()) {
                acc += wi * xi;
            }
            *zo = acc;
        }
        if li == dims.len() - 1 {
            softmax_in_place(&mut z);
        } else {
            match spec.activation {
                Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
                Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
            }
        }
        acts.push(z);
    }
    acts
}

/// Class-probability matrix, row-major `batch.len() x class_count`.
pub fn forward(w: &ModelWeights, batch: &LabeledBatch) -> Result<Vec<f64>> {
    check_batch_dims(w, batch)?;
    let classes = w.spec.class_count();
    let mut out = Vec::with_capacity(batch.len() * classes);
    for i in 0..batch.len() {
        let acts = run_layers(&w.spec, &w.params, batch.row(i));
        out.extend_from_slice(acts.last().expect("output layer"));
    }
    Ok(out)
}

/// Mean cross-entropy loss and its gradient w.r.t. every parameter.
pub fn loss_and_grad(w: &ModelWeights, batch: &LabeledBatch) -> Result<(f64, Vec<f64>)> {
    check_batch_dims(w, batch)?;
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (loss, grad) = loss_and_grad_raw(&w.spec, &w.params, batch);
    Ok((loss, grad))
}

fn loss_and_grad_raw(spec: &MlpSpec, params: &[f64], batch: &LabeledBatch) -> (f64, Vec<f64>) {
    let dims = spec.layer_dims();
    let mut layer_offsets = Vec::with_capacity(dims.len());
    let mut offset = 0;
    for &(fan_in, fan_out) in &dims {
        layer_offsets.push(offset);
        offset += fan_in * fan_out + fan_out;
    }

    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for i in 0..batch.len() {
        let acts = run_layers(spec, params, batch.row(i));
        let probs = acts.last().expect("output layer");
        let label = batch.labels()[i];
        loss -= probs[label].ln();

        // delta starts as dL/dz for the softmax + cross-entropy output.
        let mut delta: Vec<f64> = probs.clone();
        delta[label] -= 1.0;

        for li in (0..dims.len()).rev() {
            let (fan_in, fan_out) = dims[li];
            let base = layer_offsets[li];
            let prev = &acts[li];
            for (o, d) in delta.iter().enumerate() {
                grad[base + fan_in * fan_out + o] += d;
                let wrow = base + o * fan_in;
                for (j, p) in prev.iter().enumerate() {
                    grad[wrow + j] += d * p;
                }
            }
            if li > 0 {
                let mut next = vec![0.0; fan_in];
                for (o, d) in delta.iter().enumerate() {
                    let wrow = &params[base + o * fan_in..base + (o + 1) * fan_in];
                    for (j, nv) in next.iter_mut().enumerate() {
                        *nv += d * wrow[j];
                    }
                }
                let a = &acts[li];
                match spec.activation {
                    Activation::Relu => {
                        for (j, nv) in next.iter_mut().enumerate() {
                            if a[j] <= 0.0 {
                                *nv = 0.0;
                            }
                        }
                    }
                    Activation::Tanh => {
                        for (j, nv) in next.iter_mut().enumerate() {
                            *nv *= 1.0 - a[j] * a[j];
                        }
                    }
                }
                delta = next;
            }
        }
    }

    let inv_n = 1.0 / batch.len() as f64;
    loss *= inv_n;
    grad.iter_mut().for_each(|g| *g *= inv_n);
    (loss, grad)
}

/// Mini-batch SGD for `epochs` passes over `train`, returning new weights.
///
/// Pure in its inputs: the starting weights are untouched and shuffling
/// consumes only the passed rng stream.
pub fn sgd_train<R: Rng>(
    w: &ModelWeights,
    train: &LabeledBatch,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    rng: &mut R,
) -> Result<ModelWeights> {
    check_batch_dims(w, train)?;
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if epochs == 0 {
        return Err(Error::InvalidConfig("epochs must be >= 1".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::InvalidConfig("learning rate must be finite and >= 0".into()));
    }

    let mut params = w.params.clone();
    let mut indices: Vec<usize> = (0..train.len()).collect();
    for _ in 0..epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks(batch_size) {
            let mini = train.select(chunk);
            let (_, grad) = loss_and_grad_raw(&w.spec, &params, &mini);
            for (p, g) in params.iter_mut().zip(grad.iter()) {
                *p -= lr * g;
            }
        }
    }
    ModelWeights::from_params(w.spec.clone(), params)
}

/// Fraction of examples whose argmax probability matches the label.
/// Ties resolve to the lowest class index.
pub fn evaluate_accuracy(w: &ModelWeights, batch: &LabeledBatch) -> Result<f64> {
    check_batch_dims(w, batch)?;
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let classes = w.spec.class_count();
    let probs = forward(w, batch)?;
    let mut hits = 0usize;
    for (i, &label) in batch.labels().iter().enumerate() {
        let row = &probs[i * classes..(i + 1) * classes];
        let mut best = 0usize;
        for (c, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = c;
            }
        }
        if best == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / batch.len() as f64)
}
