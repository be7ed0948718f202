//! Per-round metrics and their machine-readable forms.
//!
//! The round CSV schema is fixed: one row per (round, device), sorted,
//! floats printed with 6 decimal places, so identical runs produce
//! byte-identical files. The run summary is a JSON document with stable
//! keys.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{ModelId, ScoreMatrix};
use crate::error::{Error, Result};

/// Rounds-to-convergence: first round whose trailing window of mean
/// absolute performance change drops below the threshold.
pub const CONVERGENCE_WINDOW: usize = 10;
pub const CONVERGENCE_THRESHOLD: f64 = 0.01;

pub const ROUND_CSV_HEADER: &str = "round,device_id,archetype,best_model_id,best_score,\
test_accuracy,alive_models_device,alive_models_total,score_stddev,bytes_uplinked,wall_ms";

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceRoundMetrics {
    pub device_id: usize,
    pub archetype: String,
    pub best_model_id: ModelId,
    pub best_score: f64,
    pub test_accuracy: f64,
    pub alive_models_device: usize,
    pub score_stddev: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub devices: Vec<DeviceRoundMetrics>,
    pub alive_models_total: usize,
    pub created_models_total: u64,
    pub bytes_uplinked: u64,
    pub wall_ms: u64,
}

/// Population standard deviation; 0 for fewer than two values.
pub fn population_stddev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt()
}

/// Mean absolute round-to-round change over the last `window` steps of
/// one device's performance series.
pub fn oscillation(series: &[f64], window: usize) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::SeriesTooShort);
    }
    if window == 0 {
        return Err(Error::InvalidConfig("oscillation window must be >= 1".into()));
    }
    let diffs: Vec<f64> = series.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let take = window.min(diffs.len());
    Ok(diffs[diffs.len() - take..].iter().sum::<f64>() / take as f64)
}

/// Mean of per-device oscillations.
pub fn mean_oscillation(per_device: &[Vec<f64>], window: usize) -> Result<f64> {
    if per_device.is_empty() {
        return Err(Error::SeriesTooShort);
    }
    let mut total = 0.0;
    for series in per_device {
        total += oscillation(series, window)?;
    }
    Ok(total / per_device.len() as f64)
}

/// Device-major performance series extracted from a metrics stream.
pub fn performance_series(metrics: &[RoundMetrics]) -> Vec<Vec<f64>> {
    let devices = metrics.first().map(|m| m.devices.len()).unwrap_or(0);
    let mut series = vec![Vec::with_capacity(metrics.len()); devices];
    for round in metrics {
        for dev in &round.devices {
            series[dev.device_id].push(dev.test_accuracy);
        }
    }
    series
}

/// Mean over devices of the population standard deviation of each
/// device's scores. Single-model devices contribute 0.
pub fn score_stddev_avg(scores: &ScoreMatrix) -> f64 {
    let n = scores.device_count();
    if n == 0 {
        return 0.0;
    }
    (0..n).map(|d| scores.stddev(d)).sum::<f64>() / n as f64
}

/// First round after which the mean absolute change in device
/// performance stays below [`CONVERGENCE_THRESHOLD`] over a full
/// [`CONVERGENCE_WINDOW`] of rounds, if any.
pub fn rounds_to_convergence(metrics: &[RoundMetrics]) -> Option<usize> {
    let series = performance_series(metrics);
    if series.is_empty() || metrics.len() < 2 {
        return None;
    }
    let rounds = metrics.len();
    let mut mean_change = Vec::with_capacity(rounds - 1);
    for i in 1..rounds {
        let sum: f64 = series.iter().map(|s| (s[i] - s[i - 1]).abs()).sum();
        mean_change.push(sum / series.len() as f64);
    }
    for end in (CONVERGENCE_WINDOW - 1)..mean_change.len() {
        let window = &mean_change[end + 1 - CONVERGENCE_WINDOW..=end];
        if window.iter().sum::<f64>() / (CONVERGENCE_WINDOW as f64) < CONVERGENCE_THRESHOLD {
            return Some(metrics[end + 1].round);
        }
    }
    None
}

/// Render the metrics stream in the fixed CSV schema.
pub fn round_csv_string(metrics: &[RoundMetrics]) -> String {
    use std::fmt::Write as _;
    let mut ordered: Vec<&RoundMetrics> = metrics.iter().collect();
    ordered.sort_by_key(|m| m.round);
    let mut out = String::with_capacity(64 + metrics.len() * 64);
    out.push_str(ROUND_CSV_HEADER);
    out.push('\n');
    for round in ordered {
        let mut devices: Vec<&DeviceRoundMetrics> = round.devices.iter().collect();
        devices.sort_by_key(|d| d.device_id);
        for dev in devices {
            writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{},{},{:.6},{},{}",
                round.round,
                dev.device_id,
                dev.archetype,
                dev.best_model_id,
                dev.best_score,
                dev.test_accuracy,
                dev.alive_models_device,
                round.alive_models_total,
                dev.score_stddev,
                round.bytes_uplinked,
                round.wall_ms,
            )
            .expect("writing to a String cannot fail");
        }
    }
    out
}

pub fn write_round_csv(path: &Path, metrics: &[RoundMetrics]) -> Result<()> {
    fs::write(path, round_csv_string(metrics))?;
    Ok(())
}

/// Parse a round CSV back into a metrics stream.
///
/// `created_models_total` is not part of the schema and comes back as 0;
/// float fields carry the printed 6-decimal precision.
pub fn parse_round_csv(text: &str) -> Result<Vec<RoundMetrics>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == ROUND_CSV_HEADER => {}
        _ => {
            return Err(Error::MetricsParse { line: 1, reason: "missing or wrong header".into() })
        }
    }
    let mut rounds: Vec<RoundMetrics> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::MetricsParse {
                line: line_no,
                reason: format!("expected 11 fields, found {}", fields.len()),
            });
        }
        let parse_usize = |i: usize| -> Result<usize> {
            fields[i].parse().map_err(|_| Error::MetricsParse {
                line: line_no,
                reason: format!("bad integer `{}`", fields[i]),
            })
        };
        let parse_u64 = |i: usize| -> Result<u64> {
            fields[i].parse().map_err(|_| Error::MetricsParse {
                line: line_no,
                reason: format!("bad integer `{}`", fields[i]),
            })
        };
        let parse_f64 = |i: usize| -> Result<f64> {
            fields[i].parse().map_err(|_| Error::MetricsParse {
                line: line_no,
                reason: format!("bad float `{}`", fields[i]),
            })
        };
        let round = parse_usize(0)?;
        let device = DeviceRoundMetrics {
            device_id: parse_usize(1)?,
            archetype: fields[2].to_string(),
            best_model_id: ModelId(parse_u64(3)?),
            best_score: parse_f64(4)?,
            test_accuracy: parse_f64(5)?,
            alive_models_device: parse_usize(6)?,
            score_stddev: parse_f64(8)?,
        };
        let alive_total = parse_usize(7)?;
        let bytes = parse_u64(9)?;
        let wall_ms = parse_u64(10)?;
        match rounds.last_mut() {
            Some(last) if last.round == round => last.devices.push(device),
            _ => rounds.push(RoundMetrics {
                round,
                devices: vec![device],
                alive_models_total: alive_total,
                created_models_total: 0,
                bytes_uplinked: bytes,
                wall_ms,
            }),
        }
    }
    Ok(rounds)
}

/// End-of-run summary with stable key names.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: serde_json::Value,
    pub final_accuracy_by_archetype: BTreeMap<String, f64>,
    pub rounds_to_convergence: Option<usize>,
    pub final_alive_models: usize,
    pub total_uplink_bytes: u64,
    pub total_wall_ms: u64,
}

impl RunSummary {
    pub fn from_metrics(
        config: serde_json::Value,
        metrics: &[RoundMetrics],
        total_wall_ms: u64,
    ) -> Result<Self> {
        let last = metrics
            .last()
            .ok_or_else(|| Error::InvalidConfig("summary of an empty run".into()))?;
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for dev in &last.devices {
            let entry = sums.entry(dev.archetype.clone()).or_insert((0.0, 0));
            entry.0 += dev.test_accuracy;
            entry.1 += 1;
        }
        let final_accuracy_by_archetype =
            sums.into_iter().map(|(tag, (sum, n))| (tag, sum / n as f64)).collect();
        Ok(Self {
            config,
            final_accuracy_by_archetype,
            rounds_to_convergence: rounds_to_convergence(metrics),
            final_alive_models: last.alive_models_total,
            total_uplink_bytes: metrics.iter().map(|m| m.bytes_uplinked).sum(),
            total_wall_ms,
        })
    }
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
