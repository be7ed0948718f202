//! Per-device model scores and validation-accuracy history.

use std::collections::{BTreeMap, VecDeque};

use super::registry::ModelId;
use crate::metrics::population_stddev;

/// Scores `c[device][model]`. A missing entry encodes 0, i.e. the model
/// is deleted for that device; after each normalization a device's
/// stored scores sum to 1.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreMatrix {
    rows: Vec<BTreeMap<ModelId, f64>>,
}

impl ScoreMatrix {
    pub fn new(n_devices: usize) -> Self {
        Self { rows: vec![BTreeMap::new(); n_devices] }
    }

    pub fn device_count(&self) -> usize {
        self.rows.len()
    }

    pub fn score(&self, device: usize, model: ModelId) -> f64 {
        self.rows[device].get(&model).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, device: usize, model: ModelId, value: f64) {
        debug_assert!(value.is_finite() && value > 0.0);
        self.rows[device].insert(model, value);
    }

    pub fn remove(&mut self, device: usize, model: ModelId) {
        self.rows[device].remove(&model);
    }

    /// The device's nonzero scores, ascending by model id.
    pub fn row(&self, device: usize) -> &BTreeMap<ModelId, f64> {
        &self.rows[device]
    }

    pub fn model_count(&self, device: usize) -> usize {
        self.rows[device].len()
    }

    pub fn row_sum(&self, device: usize) -> f64 {
        self.rows[device].values().sum()
    }

    /// Scale the device's scores to sum to 1. No-op on an empty row.
    pub fn normalize_row(&mut self, device: usize) {
        let sum: f64 = self.rows[device].values().sum();
        if sum > 0.0 {
            for v in self.rows[device].values_mut() {
                *v /= sum;
            }
        }
    }

    /// Highest-scoring model for the device; ties go to the lowest id.
    pub fn best(&self, device: usize) -> Option<(ModelId, f64)> {
        let mut best: Option<(ModelId, f64)> = None;
        for (&m, &c) in &self.rows[device] {
            match best {
                Some((_, bc)) if c <= bc => {}
                _ => best = Some((m, c)),
            }
        }
        best
    }

    /// Population standard deviation of the device's nonzero scores.
    pub fn stddev(&self, device: usize) -> f64 {
        let values: Vec<f64> = self.rows[device].values().copied().collect();
        population_stddev(&values)
    }

    /// True if any device holds a nonzero score for the model.
    pub fn has_supporter(&self, model: ModelId) -> bool {
        self.rows.iter().any(|row| row.contains_key(&model))
    }
}

/// Ring buffers of the most recent validation accuracies per
/// (device, model), capped at the score window length.
#[derive(Clone, Debug)]
pub struct AccuracyHistory {
    rows: Vec<BTreeMap<ModelId, VecDeque<f64>>>,
    window: usize,
}

impl AccuracyHistory {
    pub fn new(n_devices: usize, window: usize) -> Self {
        Self { rows: vec![BTreeMap::new(); n_devices], window }
    }

    pub fn push(&mut self, device: usize, model: ModelId, accuracy: f64) {
        debug_assert!((0.0..=1.0).contains(&accuracy));
        let buf = self.rows[device].entry(model).or_default();
        if buf.len() == self.window {
            buf.pop_front();
        }
        buf.push_back(accuracy);
    }

    /// Score base for a model: the buffered accuracies summed and
    /// divided by the full window length, so a model observed fewer
    /// than `window` times carries proportionally less mass. `None`
    /// when the device never evaluated the model.
    pub fn score_base(&self, device: usize, model: ModelId) -> Option<f64> {
        self.rows[device].get(&model).and_then(|buf| {
            if buf.is_empty() {
                None
            } else {
                Some(buf.iter().sum::<f64>() / self.window as f64)
            }
        })
    }

    pub fn len(&self, device: usize, model: ModelId) -> usize {
        self.rows[device].get(&model).map(VecDeque::len).unwrap_or(0)
    }

    pub fn remove(&mut self, device: usize, model: ModelId) {
        self.rows[device].remove(&model);
    }

    pub fn purge_model(&mut self, model: ModelId) {
        for row in &mut self.rows {
            row.remove(&model);
        }
    }
}
