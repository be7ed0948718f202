//! Experiment orchestration: turn a config into shards and a simulation,
//! execute it, and write the round CSV and summary. `compare` runs both
//! strategies on the identical data partition; `sweep` runs one
//! simulation per swept value under a shared seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use fedcd_core::data::{
    build_device_shards, shards_digest, ArchetypeSpec, DeviceShard, GlobalDataset,
};
use fedcd_core::engine::{Simulation, SimulationConfig, Strategy};
use fedcd_core::metrics::{
    mean_oscillation, performance_series, write_round_csv, write_summary, RoundMetrics,
    RunSummary,
};
use fedcd_core::rng;

use crate::config::{ArchetypeScheme, BiasSpec, ExperimentFile, HierarchicalSection};
use crate::{CliError, CliResult};

/// When set, output lands under this root instead of the working
/// directory; the config's `output_dir` becomes a relative name.
pub const OUTPUT_ROOT_ENV: &str = "FEDCD_OUTPUT_ROOT";

/// Oscillation comparisons look at this many trailing rounds.
pub const OSCILLATION_WINDOW: usize = 10;

pub struct ResolvedExperiment {
    pub file: ExperimentFile,
    pub sim: SimulationConfig,
    pub shards: Vec<DeviceShard>,
    pub out_dir: PathBuf,
}

pub struct RunOutput {
    pub metrics: Vec<RoundMetrics>,
    pub summary: RunSummary,
    pub dir: PathBuf,
}

/// One archetype spec per device. Hierarchical archetypes assign focus
/// labels round-robin and draw each device's bias once from the
/// configured range; hypergeometric archetypes cycle the successes list.
pub fn device_archetypes(file: &ExperimentFile) -> CliResult<Vec<ArchetypeSpec>> {
    let n = file.n_devices();
    let mut specs = Vec::with_capacity(n);
    match file.scheme() {
        ArchetypeScheme::Hierarchical(h) => {
            let classes = file.data.classes;
            let group_size = classes / h.meta_archetypes;
            for device in 0..n {
                let focus = device % classes;
                let group = focus / group_size;
                let meta_labels: Vec<usize> =
                    (group * group_size..(group + 1) * group_size).collect();
                let bias = match h.bias {
                    BiasSpec::Fixed(b) => b,
                    BiasSpec::Uniform(range) => rng::stream(file.seed, "device-bias", &[device as u64])
                        .random_range(range.low..range.high),
                };
                specs.push(ArchetypeSpec::Hierarchical { meta_labels, focus_label: focus, bias });
            }
        }
        ArchetypeScheme::Hypergeometric(h) => {
            for device in 0..n {
                specs.push(ArchetypeSpec::Hypergeometric {
                    population: h.population,
                    successes: h.successes[device % h.successes.len()],
                    draws: h.draws,
                });
            }
        }
    }
    Ok(specs)
}

fn output_dir(file: &ExperimentFile) -> PathBuf {
    match std::env::var(OUTPUT_ROOT_ENV) {
        Ok(root) if !root.is_empty() => PathBuf::from(root).join(&file.output_dir),
        _ => PathBuf::from(&file.output_dir),
    }
}

/// Build the dataset and shards an experiment file describes.
pub fn resolve(file: ExperimentFile) -> CliResult<ResolvedExperiment> {
    file.validate()?;
    let sim = file.sim_config();

    let dataset = match &file.data.csv_path {
        Some(path) => {
            let dataset = GlobalDataset::from_csv(Path::new(path))?;
            if dataset.class_count() != file.data.classes
                || dataset.feature_dim() != file.data.feature_dim
            {
                return Err(CliError::Config(format!(
                    "csv dataset has {} classes and feature dim {}, config says {} and {}",
                    dataset.class_count(),
                    dataset.feature_dim(),
                    file.data.classes,
                    file.data.feature_dim
                )));
            }
            dataset
        }
        None => GlobalDataset::synthetic(
            file.data.classes,
            file.data.feature_dim,
            file.data.per_class_pool,
            file.data.spread,
            file.seed,
        )?,
    };

    let specs = device_archetypes(&file)?;
    let shards = build_device_shards(
        &dataset,
        &specs,
        file.data.samples_per_device,
        file.data.val_frac,
        file.data.test_frac,
        file.seed,
    )?;
    let out_dir = output_dir(&file);
    Ok(ResolvedExperiment { file, sim, shards, out_dir })
}

/// Run a resolved experiment and write `rounds.csv` + `summary.json`
/// into its output directory (or a subdirectory).
pub fn execute_run(resolved: &ResolvedExperiment, subdir: Option<&str>) -> CliResult<RunOutput> {
    let dir = match subdir {
        Some(name) => resolved.out_dir.join(name),
        None => resolved.out_dir.clone(),
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(e.to_string()))?;

    let start = Instant::now();
    let mut sim = Simulation::new(resolved.sim.clone(), resolved.shards.clone())?;
    let metrics = sim.run_to_end()?;
    let total_wall_ms = start.elapsed().as_millis() as u64;

    let config_echo =
        serde_json::to_value(&resolved.file).map_err(|e| CliError::Runtime(e.to_string()))?;
    let summary = RunSummary::from_metrics(config_echo, &metrics, total_wall_ms)?;
    write_round_csv(&dir.join("rounds.csv"), &metrics)?;
    write_summary(&dir.join("summary.json"), &summary)?;
    Ok(RunOutput { metrics, summary, dir })
}

pub fn cmd_run(config_path: &Path, overrides: &[String]) -> CliResult<RunOutput> {
    let file = crate::config::load_experiment(config_path, overrides)?;
    let resolved = resolve(file)?;
    let out = execute_run(&resolved, None)?;
    let mean: f64 = out
        .summary
        .final_accuracy_by_archetype
        .values()
        .sum::<f64>()
        / out.summary.final_accuracy_by_archetype.len().max(1) as f64;
    println!(
        "run complete: {} rounds, final mean accuracy {:.4}, outputs in {}",
        out.metrics.len(),
        mean,
        out.dir.display()
    );
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CompareSummary {
    pub shard_digest: String,
    pub final_accuracy_delta_by_archetype: std::collections::BTreeMap<String, f64>,
    pub mean_final_accuracy_delta: f64,
    pub oscillation_fedcd: f64,
    pub oscillation_fedavg: f64,
    pub oscillation_ratio: Option<f64>,
}

pub struct CompareOutput {
    pub fedcd: RunOutput,
    pub fedavg: RunOutput,
    pub summary: CompareSummary,
}

/// Run the experiment under both strategies on the same data partition
/// and summarize the differences.
pub fn cmd_compare(config_path: &Path, overrides: &[String]) -> CliResult<CompareOutput> {
    let base = crate::config::load_experiment(config_path, overrides)?;
    compare_experiment(base)
}

pub fn compare_experiment(base: ExperimentFile) -> CliResult<CompareOutput> {
    let mut fedcd_file = base.clone();
    fedcd_file.strategy = Strategy::FedCd;

    let mut fedavg_file = base;
    fedavg_file.strategy = Strategy::FedAvg;
    fedavg_file.rounds.milestones.clear();

    let resolved_cd = resolve(fedcd_file)?;
    let resolved_avg = resolve(fedavg_file)?;
    let digest_cd = shards_digest(&resolved_cd.shards);
    let digest_avg = shards_digest(&resolved_avg.shards);
    if digest_cd != digest_avg {
        return Err(CliError::Runtime(format!(
            "strategies would see different data partitions: {digest_cd:016x} vs {digest_avg:016x}"
        )));
    }

    let out_cd = execute_run(&resolved_cd, Some("fedcd"))?;
    let out_avg = execute_run(&resolved_avg, Some("fedavg"))?;

    let mut deltas = std::collections::BTreeMap::new();
    for (tag, acc) in &out_cd.summary.final_accuracy_by_archetype {
        let other = out_avg.summary.final_accuracy_by_archetype.get(tag).copied().unwrap_or(0.0);
        deltas.insert(tag.clone(), acc - other);
    }
    let mean_delta = deltas.values().sum::<f64>() / deltas.len().max(1) as f64;

    let osc_cd = mean_oscillation(&performance_series(&out_cd.metrics), OSCILLATION_WINDOW)?;
    let osc_avg = mean_oscillation(&performance_series(&out_avg.metrics), OSCILLATION_WINDOW)?;
    let summary = CompareSummary {
        shard_digest: format!("{digest_cd:016x}"),
        final_accuracy_delta_by_archetype: deltas,
        mean_final_accuracy_delta: mean_delta,
        oscillation_fedcd: osc_cd,
        oscillation_fedavg: osc_avg,
        oscillation_ratio: if osc_avg > 0.0 { Some(osc_cd / osc_avg) } else { None },
    };

    let mut text = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(resolved_cd.out_dir.join("compare.json"), text)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    println!(
        "compare complete: mean accuracy delta {:+.4}, oscillation {:.4} vs {:.4}, outputs in {}",
        summary.mean_final_accuracy_delta,
        summary.oscillation_fedcd,
        summary.oscillation_fedavg,
        resolved_cd.out_dir.display()
    );
    Ok(CompareOutput { fedcd: out_cd, fedavg: out_avg, summary })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Bias,
    QuantizationBits,
    ScoreWindow,
}

impl SweepParam {
    pub fn parse(name: &str) -> CliResult<Self> {
        match name {
            "bias" => Ok(Self::Bias),
            "quantization_bits" => Ok(Self::QuantizationBits),
            "score_window" => Ok(Self::ScoreWindow),
            other => Err(CliError::Config(format!(
                "unknown sweep parameter `{other}`; expected bias, quantization_bits, or score_window"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Bias => "bias",
            Self::QuantizationBits => "quantization_bits",
            Self::ScoreWindow => "score_window",
        }
    }
}

fn apply_sweep_value(
    file: &ExperimentFile,
    param: SweepParam,
    raw: &str,
) -> CliResult<ExperimentFile> {
    let mut out = file.clone();
    match param {
        SweepParam::Bias => {
            let bias: f64 = raw
                .parse()
                .map_err(|_| CliError::Config(format!("bad bias value `{raw}`")))?;
            let section = match out.scheme() {
                ArchetypeScheme::Hierarchical(h) => h,
                ArchetypeScheme::Hypergeometric(_) => {
                    return Err(CliError::Config(
                        "bias sweeps require the hierarchical archetype scheme".into(),
                    ))
                }
            };
            out.data.hierarchical =
                Some(HierarchicalSection { bias: BiasSpec::Fixed(bias), ..section });
            out.data.hypergeometric = None;
        }
        SweepParam::QuantizationBits => {
            out.quantization.bits = raw
                .parse()
                .map_err(|_| CliError::Config(format!("bad quantization bits `{raw}`")))?;
        }
        SweepParam::ScoreWindow => {
            out.scoring.window = raw
                .parse()
                .map_err(|_| CliError::Config(format!("bad score window `{raw}`")))?;
        }
    }
    out.validate()?;
    Ok(out)
}

pub struct SweepOutput {
    pub runs: Vec<(String, RunOutput)>,
    pub csv_path: PathBuf,
}

/// One run per swept value under the shared seed, each in its own
/// subdirectory, plus an aggregated per-round CSV keyed by value.
pub fn cmd_sweep(
    config_path: &Path,
    param_name: &str,
    values: &[String],
    overrides: &[String],
) -> CliResult<SweepOutput> {
    let param = SweepParam::parse(param_name)?;
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let base = crate::config::load_experiment(config_path, overrides)?;
    sweep_experiment(base, param, values)
}

pub fn sweep_experiment(
    base: ExperimentFile,
    param: SweepParam,
    values: &[String],
) -> CliResult<SweepOutput> {
    let mut runs = Vec::with_capacity(values.len());
    let mut root = None;
    for raw in values {
        let file = apply_sweep_value(&base, param, raw)?;
        let resolved = resolve(file)?;
        root.get_or_insert_with(|| resolved.out_dir.clone());
        let out = execute_run(&resolved, Some(&format!("{}_{raw}", param.name())))?;
        runs.push((raw.clone(), out));
    }
    let root = root.expect("at least one value");

    let mut csv = String::from(
        "param,value,round,mean_test_accuracy,alive_models_total,mean_score_stddev,bytes_uplinked\n",
    );
    for (raw, out) in &runs {
        for round in &out.metrics {
            let n = round.devices.len() as f64;
            let mean_acc: f64 = round.devices.iter().map(|d| d.test_accuracy).sum::<f64>() / n;
            let mean_std: f64 = round.devices.iter().map(|d| d.score_stddev).sum::<f64>() / n;
            writeln!(
                csv,
                "{},{},{},{:.6},{},{:.6},{}",
                param.name(),
                raw,
                round.round,
                mean_acc,
                round.alive_models_total,
                mean_std,
                round.bytes_uplinked
            )
            .expect("writing to a String cannot fail");
        }
    }
    let csv_path = root.join("sweep.csv");
    fs::write(&csv_path, csv).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("sweep complete: {} runs, aggregate in {}", runs.len(), csv_path.display());
    Ok(SweepOutput { runs, csv_path })
}
