//! Symmetric uniform per-tensor weight quantization.
//!
//! Each layer's weight matrix and bias vector is quantized on its own
//! grid: `scale = max|x| / (2^(bits-1) - 1)`, values snap to
//! `round(x / scale) * scale`. `bits = 0` switches quantization off.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelWeights;

pub const ALLOWED_BITS: [u8; 4] = [0, 4, 8, 16];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizationSpec {
    pub bits: u8,
}

impl QuantizationSpec {
    pub fn new(bits: u8) -> Result<Self> {
        let spec = Self { bits };
        spec.validate()?;
        Ok(spec)
    }

    pub fn off() -> Self {
        Self { bits: 0 }
    }

    pub fn is_off(&self) -> bool {
        self.bits == 0
    }

    pub fn validate(&self) -> Result<()> {
        if !ALLOWED_BITS.contains(&self.bits) {
            return Err(Error::InvalidConfig(format!(
                "quantization bits must be one of {ALLOWED_BITS:?}, got {}",
                self.bits
            )));
        }
        Ok(())
    }
}

impl Default for QuantizationSpec {
    fn default() -> Self {
        Self::off()
    }
}

/// Snap one tensor to its symmetric grid.
///
/// The element realising `max|x|` maps to exactly itself (its normalized
/// value is exactly 1.0), which keeps the recovered scale of an already
/// quantized tensor identical and makes the operation idempotent.
fn quantize_tensor(values: &mut [f64], qmax: f64) {
    let max = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return;
    }
    for v in values.iter_mut() {
        let level = (*v / max * qmax).round();
        *v = level / qmax * max;
    }
}

/// Quantize every weight matrix and bias vector of `w` independently.
pub fn quantize_weights(w: &ModelWeights, q: &QuantizationSpec) -> ModelWeights {
    if q.is_off() {
        return w.clone();
    }
    let qmax = ((1u32 << (q.bits - 1)) - 1) as f64;
    let mut params = w.params().to_vec();
    let mut offset = 0;
    for (fan_in, fan_out) in w.spec().layer_dims() {
        quantize_tensor(&mut params[offset..offset + fan_in * fan_out], qmax);
        offset += fan_in * fan_out;
        quantize_tensor(&mut params[offset..offset + fan_out], qmax);
        offset += fan_out;
    }
    ModelWeights::from_params(w.spec().clone(), params).expect("quantization preserves shape and finiteness")
}

/// Serialized payload size of one model update at the given precision.
/// `bits = 0` transmits full 64-bit values.
pub fn payload_bytes(param_count: usize, q: &QuantizationSpec) -> u64 {
    let count = param_count as u64;
    if q.is_off() {
        count * 8
    } else {
        (count * u64::from(q.bits)).div_ceil(8)
    }
}
