//! Experiment files: a strict TOML document mirroring the simulation
//! configuration plus data-generation parameters. Unknown keys are
//! rejected, and `--key=value` command-line overrides beat file values,
//! which beat defaults.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use fedcd_core::engine::{SimulationConfig, Strategy};
use fedcd_core::model::{Activation, QuantizationSpec};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentFile {
    pub seed: u64,
    pub strategy: Strategy,
    pub output_dir: String,
    pub rounds: RoundsSection,
    pub scoring: ScoringSection,
    pub trainer: TrainerSection,
    pub quantization: QuantizationSection,
    pub data: DataSection,
}

impl Default for ExperimentFile {
    fn default() -> Self {
        Self {
            seed: 1,
            strategy: Strategy::FedCd,
            output_dir: "fedcd-out".into(),
            rounds: RoundsSection::default(),
            scoring: ScoringSection::default(),
            trainer: TrainerSection::default(),
            quantization: QuantizationSection::default(),
            data: DataSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundsSection {
    pub total: usize,
    pub milestones: Vec<usize>,
    pub devices_per_round: usize,
}

impl Default for RoundsSection {
    fn default() -> Self {
        Self { total: 45, milestones: vec![5, 15, 25, 30], devices_per_round: 15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringSection {
    pub window: usize,
    pub late_prune_round: usize,
    pub late_prune_threshold: f64,
    pub noise_std: f64,
}

impl Default for ScoringSection {
    fn default() -> Self {
        Self { window: 3, late_prune_round: 20, late_prune_threshold: 0.3, noise_std: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
}

impl Default for TrainerSection {
    fn default() -> Self {
        Self {
            local_epochs: 1,
            learning_rate: 0.05,
            batch_size: 32,
            hidden_layers: vec![32],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizationSection {
    pub bits: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub classes: usize,
    pub feature_dim: usize,
    pub per_class_pool: usize,
    pub samples_per_device: usize,
    pub val_frac: f64,
    pub test_frac: f64,
    pub spread: f64,
    pub devices_per_archetype: usize,
    /// Import pools from a CSV file (label in the last column) instead
    /// of generating Gaussian class blobs.
    pub csv_path: Option<String>,
    pub hierarchical: Option<HierarchicalSection>,
    pub hypergeometric: Option<HypergeometricSection>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            classes: 10,
            feature_dim: 16,
            per_class_pool: 750,
            samples_per_device: 600,
            val_frac: 0.2,
            test_frac: 0.2,
            spread: 0.55,
            devices_per_archetype: 3,
            csv_path: None,
            hierarchical: None,
            hypergeometric: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchicalSection {
    pub meta_archetypes: usize,
    pub bias: BiasSpec,
}

impl Default for HierarchicalSection {
    fn default() -> Self {
        Self { meta_archetypes: 2, bias: BiasSpec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HypergeometricSection {
    pub population: u64,
    pub successes: Vec<u64>,
    pub draws: u64,
}

impl Default for HypergeometricSection {
    fn default() -> Self {
        Self { population: 110, successes: vec![5, 25, 45, 65, 85, 105], draws: 10 }
    }
}

/// Device bias: one constant, or drawn per device from a uniform range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BiasSpec {
    Fixed(f64),
    Uniform(BiasRange),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasRange {
    pub low: f64,
    pub high: f64,
}

impl Default for BiasSpec {
    fn default() -> Self {
        BiasSpec::Uniform(BiasRange { low: 0.6, high: 0.7 })
    }
}

/// The archetype scheme in effect after defaulting.
#[derive(Debug, Clone, PartialEq)]
pub enum ArchetypeScheme {
    Hierarchical(HierarchicalSection),
    Hypergeometric(HypergeometricSection),
}

impl ExperimentFile {
    pub fn validate(&self) -> CliResult<()> {
        if self.data.hierarchical.is_some() && self.data.hypergeometric.is_some() {
            return Err(CliError::Config(
                "data.hierarchical and data.hypergeometric are mutually exclusive".into(),
            ));
        }
        if self.data.classes < 2 {
            return Err(CliError::Config("data.classes must be >= 2".into()));
        }
        if self.data.devices_per_archetype == 0 {
            return Err(CliError::Config("data.devices_per_archetype must be >= 1".into()));
        }
        match self.scheme() {
            ArchetypeScheme::Hierarchical(h) => {
                if h.meta_archetypes == 0 || self.data.classes % h.meta_archetypes != 0 {
                    return Err(CliError::Config(format!(
                        "data.classes ({}) must divide evenly into {} meta archetypes",
                        self.data.classes, h.meta_archetypes
                    )));
                }
                match h.bias {
                    BiasSpec::Fixed(b) if !(0.0..=1.0).contains(&b) => {
                        return Err(CliError::Config(format!("bias {b} outside [0,1]")));
                    }
                    BiasSpec::Uniform(r) if !(0.0 <= r.low && r.low < r.high && r.high <= 1.0) => {
                        return Err(CliError::Config(format!(
                            "bias range [{}, {}) must satisfy 0 <= low < high <= 1",
                            r.low, r.high
                        )));
                    }
                    _ => {}
                }
            }
            ArchetypeScheme::Hypergeometric(h) => {
                if h.successes.is_empty() {
                    return Err(CliError::Config("hypergeometric successes list is empty".into()));
                }
                if h.draws > h.population || h.successes.iter().any(|&k| k > h.population) {
                    return Err(CliError::Config(
                        "hypergeometric parameters exceed the population".into(),
                    ));
                }
            }
        }
        QuantizationSpec::new(self.quantization.bits).map_err(CliError::from)?;
        self.sim_config().validate().map_err(CliError::from)?;
        Ok(())
    }

    /// Archetype scheme with the hierarchical default applied.
    pub fn scheme(&self) -> ArchetypeScheme {
        if let Some(h) = &self.data.hypergeometric {
            ArchetypeScheme::Hypergeometric(h.clone())
        } else {
            ArchetypeScheme::Hierarchical(self.data.hierarchical.clone().unwrap_or_default())
        }
    }

    pub fn archetype_count(&self) -> usize {
        match self.scheme() {
            ArchetypeScheme::Hierarchical(_) => self.data.classes,
            ArchetypeScheme::Hypergeometric(h) => h.successes.len(),
        }
    }

    pub fn n_devices(&self) -> usize {
        self.archetype_count() * self.data.devices_per_archetype
    }

    pub fn sim_config(&self) -> SimulationConfig {
        SimulationConfig {
            n_devices: self.n_devices(),
            devices_per_round: self.rounds.devices_per_round,
            local_epochs: self.trainer.local_epochs,
            total_rounds: self.rounds.total,
            milestones: self.rounds.milestones.clone(),
            score_window: self.scoring.window,
            late_prune_round: self.scoring.late_prune_round,
            late_prune_threshold: self.scoring.late_prune_threshold,
            score_noise_std: self.scoring.noise_std,
            quantization: QuantizationSpec { bits: self.quantization.bits },
            learning_rate: self.trainer.learning_rate,
            batch_size: self.trainer.batch_size,
            hidden_layers: self.trainer.hidden_layers.clone(),
            activation: self.trainer.activation,
            seed: self.seed,
            strategy: self.strategy,
        }
    }
}

/// Parse one `key=value` override token (leading dashes optional).
fn split_override(token: &str) -> CliResult<(&str, &str)> {
    let stripped = token.trim_start_matches('-');
    stripped
        .split_once('=')
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| CliError::Config(format!("override `{token}` is not of the form key=value")))
}

fn apply_override(root: &mut toml::Value, key: &str, raw: &str) -> CliResult<()> {
    // interpret the value as a TOML literal, falling back to a string
    let parsed: toml::Value = match format!("x = {raw}").parse::<toml::Table>() {
        Ok(mut table) => table.remove("x").expect("key x was just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut cursor = root;
    for part in &parts[..parts.len() - 1] {
        cursor = cursor
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override key `{key}` crosses a non-table")))?
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    cursor
        .as_table_mut()
        .ok_or_else(|| CliError::Config(format!("override key `{key}` crosses a non-table")))?
        .insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

/// Load an experiment file and apply overrides, strictly: any unknown
/// key — from the file or an override — fails with its name.
pub fn load_experiment(path: &Path, overrides: &[String]) -> CliResult<ExperimentFile> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_experiment(&text, overrides)
}

pub fn parse_experiment(text: &str, overrides: &[String]) -> CliResult<ExperimentFile> {
    let mut value: toml::Value = text
        .parse::<toml::Table>()
        .map_err(|e| CliError::Config(e.to_string()))?
        .into();
    for token in overrides {
        let (key, raw) = split_override(token)?;
        apply_override(&mut value, key, raw)?;
    }
    let file: ExperimentFile =
        value.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    file.validate()?;
    Ok(file)
}
