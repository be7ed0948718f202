//! The round state machine: device selection, local training and
//! evaluation, score-weighted aggregation, score bookkeeping, pruning,
//! garbage collection, and milestone cloning.
//!
//! Every round executes, in order: select participating devices → each
//! participant trains and evaluates its supported models → per-model
//! weighted aggregation → score update from recent validation accuracy →
//! per-device pruning → global garbage collection → (on milestone
//! rounds) cloning. Metrics are collected after all state changes.
//!
//! Single-model federated averaging falls out as the degenerate
//! configuration with no milestones: every device scores the lone model
//! 1, so aggregation reduces to the plain mean and nothing is ever
//! cloned or deleted.

pub mod registry;
pub mod scores;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DeviceShard;
use crate::error::{Error, Result};
use crate::metrics::{population_stddev, DeviceRoundMetrics, RoundMetrics};
use crate::model::{
    evaluate_accuracy, init_weights, payload_bytes, quantize_weights, sgd_train, Activation,
    MlpSpec, ModelWeights, QuantizationSpec,
};
use crate::rng;

pub use registry::{ModelEntry, ModelId, ModelRegistry};
pub use scores::{AccuracyHistory, ScoreMatrix};

/// No deletions happen when the score spread is below this; exactly
/// tied scores would otherwise all sit at `max - c >= sigma = 0`.
pub const SIGMA_GUARD: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[serde(rename = "fedcd")]
    FedCd,
    #[serde(rename = "fedavg")]
    FedAvg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_devices: usize,
    pub devices_per_round: usize,
    pub local_epochs: usize,
    pub total_rounds: usize,
    pub milestones: Vec<usize>,
    pub score_window: usize,
    pub late_prune_round: usize,
    pub late_prune_threshold: f64,
    pub score_noise_std: f64,
    pub quantization: QuantizationSpec,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    pub strategy: Strategy,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_devices: 30,
            devices_per_round: 15,
            local_epochs: 1,
            total_rounds: 45,
            milestones: vec![5, 15, 25, 30],
            score_window: 3,
            late_prune_round: 20,
            late_prune_threshold: 0.3,
            score_noise_std: 0.0,
            quantization: QuantizationSpec::off(),
            learning_rate: 0.05,
            batch_size: 32,
            hidden_layers: vec![32],
            activation: Activation::Relu,
            seed: 1,
            strategy: Strategy::FedCd,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_devices == 0 {
            return Err(Error::InvalidConfig("n_devices must be >= 1".into()));
        }
        if self.devices_per_round == 0 || self.devices_per_round > self.n_devices {
            return Err(Error::InvalidConfig(format!(
                "devices_per_round must lie in 1..={}, got {}",
                self.n_devices, self.devices_per_round
            )));
        }
        if self.local_epochs == 0 {
            return Err(Error::InvalidConfig("local_epochs must be >= 1".into()));
        }
        if self.total_rounds == 0 {
            return Err(Error::InvalidConfig("total_rounds must be >= 1".into()));
        }
        if self.score_window == 0 {
            return Err(Error::InvalidConfig("score_window must be >= 1".into()));
        }
        for w in self.milestones.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidConfig("milestones must be strictly increasing".into()));
            }
        }
        if let (Some(&first), Some(&last)) = (self.milestones.first(), self.milestones.last()) {
            if first == 0 || last > self.total_rounds {
                return Err(Error::InvalidConfig(format!(
                    "milestones must lie in 1..={}",
                    self.total_rounds
                )));
            }
        }
        if self.strategy == Strategy::FedAvg && !self.milestones.is_empty() {
            return Err(Error::InvalidConfig(
                "the fedavg strategy runs a single model; milestones must be empty".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.late_prune_threshold) {
            return Err(Error::InvalidConfig("late_prune_threshold must lie in [0,1]".into()));
        }
        if !self.score_noise_std.is_finite() || self.score_noise_std < 0.0 {
            return Err(Error::InvalidConfig("score_noise_std must be finite and >= 0".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be finite and >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.hidden_layers.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("hidden layer sizes must be >= 1".into()));
        }
        self.quantization.validate()?;
        Ok(())
    }

    /// Number of milestones at or before `round`.
    pub fn milestones_passed(&self, round: usize) -> usize {
        self.milestones.iter().filter(|&&m| m <= round).count()
    }
}

/// One trained model a device reports back: quantized weights plus the
/// validation accuracy of exactly those weights.
#[derive(Clone, Debug)]
pub struct ModelUpdate {
    pub model: ModelId,
    pub weights: ModelWeights,
    pub val_accuracy: f64,
}

/// Score a clone received from one device at creation.
#[derive(Clone, Debug, PartialEq)]
pub struct CloneAssignment {
    pub device: usize,
    pub parent_score: f64,
    pub assigned: f64,
    /// The parent was the device's only model at cloning time.
    pub sole_parent: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CloneRecord {
    pub round: usize,
    pub parent: ModelId,
    pub clone: ModelId,
    pub assignments: Vec<CloneAssignment>,
}

/// Score-weighted average of per-device updates for one model:
/// `sum_i c_i w_i / sum_i c_i` over the contributing devices, in the
/// order given. `None` when nothing contributes, in which case the model
/// keeps its previous weights for the round.
pub fn aggregate_model(contributions: &[(f64, &ModelWeights)]) -> Result<Option<ModelWeights>> {
    let total: f64 = contributions.iter().map(|(c, _)| *c).sum();
    if contributions.is_empty() || total <= 0.0 {
        return Ok(None);
    }
    let spec = contributions[0].1.spec().clone();
    let mut acc = vec![0.0; spec.param_count()];
    for (c, w) in contributions {
        debug_assert_eq!(w.spec(), &spec);
        for (a, p) in acc.iter_mut().zip(w.params()) {
            *a += c * p;
        }
    }
    for a in acc.iter_mut() {
        *a /= total;
    }
    Ok(Some(ModelWeights::from_params(spec, acc)?))
}

/// Full state of one simulated run.
pub struct Simulation {
    config: SimulationConfig,
    shards: Vec<DeviceShard>,
    mlp_spec: MlpSpec,
    registry: ModelRegistry,
    scores: ScoreMatrix,
    history: AccuracyHistory,
    round: usize,
    clone_log: Vec<CloneRecord>,
}

impl Simulation {
    /// Initial state: one global model, every device scoring it 1.
    pub fn new(config: SimulationConfig, shards: Vec<DeviceShard>) -> Result<Self> {
        config.validate()?;
        if shards.len() != config.n_devices {
            return Err(Error::InvalidConfig(format!(
                "config names {} devices but {} shards were provided",
                config.n_devices,
                shards.len()
            )));
        }
        let feature_dim = shards[0].train.feature_dim();
        let mut classes = 0usize;
        for shard in &shards {
            for batch in [&shard.train, &shard.val, &shard.test] {
                if batch.feature_dim() != feature_dim {
                    return Err(Error::DimensionMismatch(
                        "shards disagree on feature dimension".into(),
                    ));
                }
                if let Some(&m) = batch.labels().iter().max() {
                    classes = classes.max(m + 1);
                }
            }
        }
        if classes < 2 {
            return Err(Error::InvalidConfig("shards must cover at least 2 classes".into()));
        }

        let mut layer_sizes = vec![feature_dim];
        layer_sizes.extend_from_slice(&config.hidden_layers);
        layer_sizes.push(classes);
        let mlp_spec = MlpSpec::new(layer_sizes, config.activation)?;

        let weights = init_weights(&mlp_spec, &mut rng::stream(config.seed, "model-init", &[]));
        let mut registry = ModelRegistry::new();
        let first = registry.register(weights, None, 0);
        let mut scores = ScoreMatrix::new(config.n_devices);
        for d in 0..config.n_devices {
            scores.set(d, first, 1.0);
        }
        let history = AccuracyHistory::new(config.n_devices, config.score_window);

        Ok(Self {
            config,
            shards,
            mlp_spec,
            registry,
            scores,
            history,
            round: 0,
            clone_log: Vec::new(),
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn shards(&self) -> &[DeviceShard] {
        &self.shards
    }

    pub fn mlp_spec(&self) -> &MlpSpec {
        &self.mlp_spec
    }

    pub fn registry(&self) -> &ModelRegistry {
        &self.registry
    }

    pub fn scores(&self) -> &ScoreMatrix {
        &self.scores
    }

    pub fn history(&self) -> &AccuracyHistory {
        &self.history
    }

    /// Completed rounds so far.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn clone_log(&self) -> &[CloneRecord] {
        &self.clone_log
    }

    /// Uniform sample of `devices_per_round` distinct devices for the
    /// given round, ascending. A pure function of `(seed, round)`.
    pub fn select_round_devices(&self, round: usize) -> Vec<usize> {
        let mut r = rng::stream(self.config.seed, "round-select", &[round as u64]);
        let mut picks = rand::seq::index::sample(
            &mut r,
            self.config.n_devices,
            self.config.devices_per_round,
        )
        .into_vec();
        picks.sort_unstable();
        picks
    }

    /// Train every model the device still scores nonzero, starting each
    /// from the current global weights. Updates are quantized before
    /// they leave the device. The reported accuracy measures the
    /// deployed global model on the device's validation data — the
    /// fit signal that drives scoring — not the freshly trained local
    /// weights, which track the local data no matter which model they
    /// started from.
    pub fn local_train_and_eval(&self, round: usize, device: usize) -> Result<Vec<ModelUpdate>> {
        let shard = &self.shards[device];
        let mut out = Vec::with_capacity(self.scores.model_count(device));
        for (&model, _) in self.scores.row(device) {
            debug_assert!(self.registry.is_alive(model));
            let deployed = self.registry.weights(model);
            let val_accuracy = evaluate_accuracy(deployed, &shard.val)?;
            let mut train_rng = rng::stream(
                self.config.seed,
                "local-train",
                &[round as u64, device as u64, model.0],
            );
            let trained = sgd_train(
                deployed,
                &shard.train,
                self.config.local_epochs,
                self.config.learning_rate,
                self.config.batch_size,
                &mut train_rng,
            )?;
            let update = quantize_weights(&trained, &self.config.quantization);
            out.push(ModelUpdate { model, weights: update, val_accuracy });
        }
        Ok(out)
    }

    /// Recompute scores for this round's participants: the score base
    /// sums the buffered validation accuracies over the score window
    /// (optionally perturbed by clamped Gaussian noise), normalized per
    /// device over its nonzero models. Devices that sat the round out
    /// keep their scores unchanged.
    pub fn update_scores(&mut self, round: usize, participants: &[usize]) {
        for &device in participants {
            let models: Vec<ModelId> = self.scores.row(device).keys().copied().collect();
            if models.is_empty() {
                continue;
            }
            let mut bases: Vec<f64> = models
                .iter()
                .map(|&m| self.history.score_base(device, m).unwrap_or(0.0))
                .collect();
            if self.config.score_noise_std > 0.0 {
                use rand_distr::{Distribution, Normal};
                let noise = Normal::new(0.0, self.config.score_noise_std)
                    .expect("validated: noise std is finite and >= 0");
                for (base, &m) in bases.iter_mut().zip(&models) {
                    let mut r = rng::stream(
                        self.config.seed,
                        "score-noise",
                        &[round as u64, device as u64, m.0],
                    );
                    *base = (*base + noise.sample(&mut r)).max(0.0);
                }
            }
            let total: f64 = bases.iter().sum();
            if total > 0.0 {
                for (&m, &b) in models.iter().zip(&bases) {
                    self.scores.set(device, m, b / total);
                }
            } else {
                let uniform = 1.0 / models.len() as f64;
                for &m in &models {
                    self.scores.set(device, m, uniform);
                }
            }
        }
    }

    /// Per-device deletion. Models whose gap to the device's best score
    /// reaches the population standard deviation of its scores are
    /// dropped, except the device's two best. Past `late_prune_round`, a
    /// device holding exactly two models also drops the weaker one when
    /// its score is at or below `late_prune_threshold`. Survivors are
    /// renormalized.
    pub fn prune_device_models(&mut self, round: usize) {
        for device in 0..self.config.n_devices {
            let row: Vec<(ModelId, f64)> =
                self.scores.row(device).iter().map(|(&m, &c)| (m, c)).collect();
            if row.len() < 2 {
                continue;
            }
            let values: Vec<f64> = row.iter().map(|(_, c)| *c).collect();
            let sigma = population_stddev(&values);
            let mut removed = false;

            if sigma > SIGMA_GUARD {
                let mut ranked = row.clone();
                ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                let exempt = [ranked[0].0, ranked[1].0];
                let top = ranked[0].1;
                for &(m, c) in &row {
                    if !exempt.contains(&m) && top - c >= sigma {
                        self.scores.remove(device, m);
                        self.history.remove(device, m);
                        removed = true;
                    }
                }
            }

            if round > self.config.late_prune_round && self.scores.model_count(device) == 2 {
                let mut pair: Vec<(ModelId, f64)> =
                    self.scores.row(device).iter().map(|(&m, &c)| (m, c)).collect();
                pair.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                let (weak_model, weak_score) = pair[1];
                if weak_score <= self.config.late_prune_threshold {
                    self.scores.remove(device, weak_model);
                    self.history.remove(device, weak_model);
                    removed = true;
                }
            }

            if removed {
                self.scores.normalize_row(device);
            }
        }
    }

    /// Mark models without a single supporting device as dead.
    pub fn garbage_collect(&mut self) {
        for model in self.registry.alive_ids() {
            if !self.scores.has_supporter(model) {
                self.registry.mark_dead(model);
                self.history.purge_model(model);
            }
        }
    }

    /// Clone every alive model. A device scoring the parent `c` assigns
    /// the clone `1 - c` before renormalization; devices that dropped
    /// the parent assign 0. A device whose only model has score exactly
    /// 1 would leave the clone dead on arrival, so the clone receives
    /// 0.5 there (an even split with the parent).
    pub fn clone_models(&mut self, round: usize) -> Vec<CloneRecord> {
        let parents = self.registry.alive_ids();
        let snapshot: Vec<Vec<(ModelId, f64)>> = (0..self.config.n_devices)
            .map(|d| self.scores.row(d).iter().map(|(&m, &c)| (m, c)).collect())
            .collect();

        let mut records = Vec::with_capacity(parents.len());
        for parent in parents {
            let weights = self.registry.weights(parent).clone();
            let clone = self.registry.register(weights, Some(parent), round);
            let mut assignments = Vec::new();
            for (device, row) in snapshot.iter().enumerate() {
                let parent_score = row
                    .iter()
                    .find(|(m, _)| *m == parent)
                    .map(|(_, c)| *c)
                    .unwrap_or(0.0);
                if parent_score <= 0.0 {
                    continue;
                }
                let sole_parent = row.len() == 1;
                let assigned = if sole_parent && parent_score == 1.0 {
                    0.5
                } else {
                    1.0 - parent_score
                };
                if assigned > 0.0 {
                    self.scores.set(device, clone, assigned);
                }
                assignments.push(CloneAssignment { device, parent_score, assigned, sole_parent });
            }
            records.push(CloneRecord { round, parent, clone, assignments });
        }
        for device in 0..self.config.n_devices {
            self.scores.normalize_row(device);
        }
        self.clone_log.extend(records.iter().cloned());
        records
    }

    /// Test accuracy of the device's highest-scoring model (ties go to
    /// the lowest model id) on its local test data.
    pub fn device_performance(&self, device: usize) -> Result<f64> {
        let (best, _) = self.scores.best(device).ok_or(Error::NoAliveModels(device))?;
        evaluate_accuracy(self.registry.weights(best), &self.shards[device].test)
    }

    /// Execute the next round and report its metrics.
    pub fn run_round(&mut self) -> Result<RoundMetrics> {
        if self.round >= self.config.total_rounds {
            return Err(Error::RoundsExhausted);
        }
        let round = self.round + 1;
        let participants = self.select_round_devices(round);

        let results: Vec<(usize, Vec<ModelUpdate>)> = participants
            .par_iter()
            .map(|&d| self.local_train_and_eval(round, d).map(|ups| (d, ups)))
            .collect::<Result<_>>()?;

        let mut bytes_uplinked = 0u64;
        for (_, updates) in &results {
            for update in updates {
                bytes_uplinked +=
                    payload_bytes(update.weights.param_count(), &self.config.quantization);
            }
        }

        for model in self.registry.alive_ids() {
            let contributions: Vec<(f64, &ModelWeights)> = results
                .iter()
                .flat_map(|(d, updates)| {
                    updates
                        .iter()
                        .filter(|u| u.model == model)
                        .map(|u| (self.scores.score(*d, model), &u.weights))
                })
                .collect();
            if let Some(new_weights) = aggregate_model(&contributions)? {
                self.registry.set_weights(model, new_weights);
            }
        }

        for (device, updates) in &results {
            for update in updates {
                self.history.push(*device, update.model, update.val_accuracy);
            }
        }
        self.update_scores(round, &participants);
        self.prune_device_models(round);
        self.garbage_collect();
        if self.config.milestones.contains(&round) {
            self.clone_models(round);
        }

        self.round = round;
        self.collect_metrics(round, bytes_uplinked)
    }

    /// Run every remaining round.
    pub fn run_to_end(&mut self) -> Result<Vec<RoundMetrics>> {
        let mut all = Vec::with_capacity(self.config.total_rounds - self.round);
        while self.round < self.config.total_rounds {
            all.push(self.run_round()?);
        }
        Ok(all)
    }

    fn collect_metrics(&self, round: usize, bytes_uplinked: u64) -> Result<RoundMetrics> {
        let mut devices = Vec::with_capacity(self.config.n_devices);
        for d in 0..self.config.n_devices {
            let (best_model_id, best_score) =
                self.scores.best(d).ok_or(Error::NoAliveModels(d))?;
            let test_accuracy =
                evaluate_accuracy(self.registry.weights(best_model_id), &self.shards[d].test)?;
            devices.push(DeviceRoundMetrics {
                device_id: d,
                archetype: self.shards[d].archetype.tag(),
                best_model_id,
                best_score,
                test_accuracy,
                alive_models_device: self.scores.model_count(d),
                score_stddev: self.scores.stddev(d),
            });
        }
        Ok(RoundMetrics {
            round,
            devices,
            alive_models_total: self.registry.alive_count(),
            created_models_total: self.registry.total_created(),
            bytes_uplinked,
            // kept at 0 so identical configs yield byte-identical CSVs;
            // measured runtime is reported in the run summary instead
            wall_ms: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_device_shards, ArchetypeSpec, GlobalDataset};

    fn tiny_shards(n: usize, seed: u64) -> Vec<DeviceShard> {
        let data = GlobalDataset::synthetic(3, 4, 200, 2.0, seed).unwrap();
        let specs: Vec<ArchetypeSpec> = (0..n)
            .map(|d| ArchetypeSpec::Hierarchical {
                meta_labels: vec![0, 1, 2],
                focus_label: d % 3,
                bias: 0.6,
            })
            .collect();
        build_device_shards(&data, &specs, 60, 0.2, 0.2, seed).unwrap()
    }

    fn tiny_config(n: usize) -> SimulationConfig {
        SimulationConfig {
            n_devices: n,
            devices_per_round: n.min(3),
            total_rounds: 30,
            milestones: vec![2, 4],
            hidden_layers: vec![8],
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn init_state() {
        let sim = Simulation::new(tiny_config(6), tiny_shards(6, 1)).unwrap();
        assert_eq!(sim.registry().total_created(), 1);
        assert_eq!(sim.registry().alive_count(), 1);
        assert_eq!(sim.scores().device_count(), 6);
        for d in 0..6 {
            assert_eq!(sim.scores().score(d, ModelId(1)), 1.0);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny_config(6);
        cfg.devices_per_round = 7;
        assert!(cfg.validate().is_err());

        let mut cfg = tiny_config(6);
        cfg.strategy = Strategy::FedAvg;
        assert!(cfg.validate().is_err());
        cfg.milestones.clear();
        assert!(cfg.validate().is_ok());

        let mut cfg = tiny_config(6);
        cfg.milestones = vec![4, 2];
        assert!(cfg.validate().is_err());

        let mut cfg = tiny_config(6);
        cfg.milestones = vec![31];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn select_full_population_and_distinctness() {
        let mut cfg = tiny_config(6);
        cfg.devices_per_round = 6;
        let sim = Simulation::new(cfg, tiny_shards(6, 1)).unwrap();
        assert_eq!(sim.select_round_devices(1), vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn select_inclusion_frequency() {
        let mut cfg = SimulationConfig::default();
        cfg.milestones.clear();
        let data = GlobalDataset::synthetic(3, 4, 400, 2.0, 2).unwrap();
        let specs: Vec<ArchetypeSpec> = (0..30)
            .map(|d| ArchetypeSpec::Hierarchical {
                meta_labels: vec![0, 1, 2],
                focus_label: d % 3,
                bias: 0.6,
            })
            .collect();
        let shards = build_device_shards(&data, &specs, 30, 0.2, 0.2, 2).unwrap();
        let sim = Simulation::new(cfg, shards).unwrap();

        let draws = 10_000usize;
        let mut hits = vec![0usize; 30];
        for round in 1..=draws {
            let picked = sim.select_round_devices(round);
            assert_eq!(picked.len(), 15);
            for d in picked {
                hits[d] += 1;
            }
        }
        // inclusion probability 1/2; 3 sigma of a binomial proportion
        let sigma = (0.5 * 0.5 / draws as f64).sqrt();
        for (d, &h) in hits.iter().enumerate() {
            let freq = h as f64 / draws as f64;
            assert!((freq - 0.5).abs() < 3.0 * sigma + 1e-9, "device {d}: {freq}");
        }
    }

    #[test]
    fn aggregate_examples() {
        let spec = MlpSpec::new(vec![1, 1], Activation::Relu).unwrap();
        let w = |v: f64| ModelWeights::from_params(spec.clone(), vec![v, 0.0]).unwrap();

        let a = w(2.0);
        let b = w(6.0);
        let out = aggregate_model(&[(0.5, &a), (0.5, &b)]).unwrap().unwrap();
        assert_eq!(out.params()[0], 4.0);

        let a = w(1.0);
        let b = w(3.0);
        let out = aggregate_model(&[(0.75, &a), (0.25, &b)]).unwrap().unwrap();
        assert_eq!(out.params()[0], 1.5);

        // convexity fixed point: identical weights under any scores
        let out = aggregate_model(&[(0.9, &a), (0.4, &a)]).unwrap().unwrap();
        assert_eq!(out.params()[0], 1.0);

        assert!(aggregate_model(&[]).unwrap().is_none());
    }

    #[test]
    fn update_scores_examples() {
        let mut sim = Simulation::new(tiny_config(2), tiny_shards(2, 3)).unwrap();
        // device 0 with two models m1='old mean 0.6', m2='0.2'
        let m2 = {
            let w = sim.registry.weights(ModelId(1)).clone();
            sim.registry.register(w, Some(ModelId(1)), 1)
        };
        sim.scores.set(0, m2, 0.5);
        for a in [0.5, 0.7, 0.6] {
            sim.history.push(0, ModelId(1), a);
        }
        for a in [0.2, 0.2, 0.2] {
            sim.history.push(0, m2, a);
        }
        sim.update_scores(2, &[0]);
        assert!((sim.scores.score(0, ModelId(1)) - 0.75).abs() < 1e-12);
        assert!((sim.scores.score(0, m2) - 0.25).abs() < 1e-12);

        // one alive model: score pinned at 1 regardless of its base
        sim.history.push(1, ModelId(1), 0.11);
        sim.update_scores(2, &[1]);
        assert_eq!(sim.scores.score(1, ModelId(1)), 1.0);
    }

    #[test]
    fn update_scores_all_zero_base_uniform() {
        let mut sim = Simulation::new(tiny_config(2), tiny_shards(2, 3)).unwrap();
        let m2 = {
            let w = sim.registry.weights(ModelId(1)).clone();
            sim.registry.register(w, Some(ModelId(1)), 1)
        };
        sim.scores.set(0, m2, 0.5);
        sim.history.push(0, ModelId(1), 0.0);
        sim.history.push(0, m2, 0.0);
        sim.update_scores(2, &[0]);
        assert_eq!(sim.scores.score(0, ModelId(1)), 0.5);
        assert_eq!(sim.scores.score(0, m2), 0.5);
    }

    fn sim_with_row(scores: &[f64]) -> (Simulation, Vec<ModelId>) {
        let mut sim = Simulation::new(tiny_config(1), tiny_shards(1, 4)).unwrap();
        let mut ids = vec![ModelId(1)];
        for _ in 1..scores.len() {
            let w = sim.registry.weights(ModelId(1)).clone();
            ids.push(sim.registry.register(w, Some(ModelId(1)), 1));
        }
        sim.scores.remove(0, ModelId(1));
        for (&m, &c) in ids.iter().zip(scores) {
            sim.scores.set(0, m, c);
        }
        (sim, ids)
    }

    #[test]
    fn prune_sigma_zero_guard() {
        let (mut sim, ids) = sim_with_row(&[0.5, 0.5]);
        sim.prune_device_models(10);
        assert_eq!(sim.scores.model_count(0), 2);
        assert_eq!(sim.scores.score(0, ids[0]), 0.5);
    }

    #[test]
    fn prune_sigma_rule_spares_top_two() {
        // sigma = 0.1118; gaps 0, 0.1, 0.2, 0.3 -> third and fourth go
        let (mut sim, ids) = sim_with_row(&[0.4, 0.3, 0.2, 0.1]);
        sim.prune_device_models(10);
        assert_eq!(sim.scores.model_count(0), 2);
        assert!((sim.scores.score(0, ids[0]) - 4.0 / 7.0).abs() < 1e-12);
        assert!((sim.scores.score(0, ids[1]) - 3.0 / 7.0).abs() < 1e-12);
        assert_eq!(sim.scores.score(0, ids[2]), 0.0);
        assert_eq!(sim.scores.score(0, ids[3]), 0.0);
    }

    #[test]
    fn prune_late_rule_deletes_weak_of_two() {
        let (mut sim, ids) = sim_with_row(&[0.72, 0.28]);
        sim.prune_device_models(20);
        assert_eq!(sim.scores.model_count(0), 2, "rule only applies past round 20");
        sim.prune_device_models(25);
        assert_eq!(sim.scores.model_count(0), 1);
        assert_eq!(sim.scores.score(0, ids[0]), 1.0);
    }

    #[test]
    fn prune_late_rule_keeps_strong_pair() {
        let (mut sim, _) = sim_with_row(&[0.55, 0.45]);
        sim.prune_device_models(25);
        assert_eq!(sim.scores.model_count(0), 2);
    }

    #[test]
    fn prune_never_deletes_top_two() {
        use rand::Rng;
        let mut r = rng::stream(99, "prune-prop", &[]);
        for case in 0..200 {
            let n: usize = r.random_range(2..7);
            let mut raw: Vec<f64> = (0..n).map(|_| r.random_range(0.01..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            raw.iter_mut().for_each(|v| *v /= sum);

            let (mut sim, ids) = sim_with_row(&raw);
            let mut ranked: Vec<(ModelId, f64)> =
                ids.iter().copied().zip(raw.iter().copied()).collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

            sim.prune_device_models(10);
            for &(m, c) in ranked.iter().take(2) {
                assert!(
                    sim.scores.score(0, m) > 0.0,
                    "case {case}: top model {m} (score {c}) was deleted from {raw:?}"
                );
            }
            assert!((sim.scores.row_sum(0) - 1.0).abs() < 1e-9, "case {case}");
        }
    }

    #[test]
    fn garbage_collect_marks_unsupported_dead() {
        let (mut sim, ids) = sim_with_row(&[0.6, 0.4]);
        sim.scores.remove(0, ids[1]);
        sim.scores.normalize_row(0);
        sim.garbage_collect();
        assert!(sim.registry.is_alive(ids[0]));
        assert!(!sim.registry.is_alive(ids[1]));
        assert_eq!(sim.registry.alive_count(), 1);
    }

    #[test]
    fn clone_initial_state_splits_evenly() {
        let mut sim = Simulation::new(tiny_config(2), tiny_shards(2, 5)).unwrap();
        let records = sim.clone_models(2);
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].parent, ModelId(1));
        assert_eq!(records[0].clone, ModelId(2));
        for a in &records[0].assignments {
            assert!(a.sole_parent);
            assert_eq!(a.parent_score, 1.0);
            assert_eq!(a.assigned, 0.5);
        }
        for d in 0..2 {
            assert!((sim.scores.score(d, ModelId(1)) - 2.0 / 3.0).abs() < 1e-12);
            assert!((sim.scores.score(d, ModelId(2)) - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(sim.registry.total_created(), 2);
    }

    #[test]
    fn clone_complement_scores_and_doubling() {
        let (mut sim, ids) = sim_with_row(&[0.7, 0.3]);
        assert_eq!(sim.registry.total_created(), 2);
        let records = sim.clone_models(5);
        assert_eq!(records.len(), 2);
        assert_eq!(sim.registry.total_created(), 4);
        let by_parent: std::collections::BTreeMap<ModelId, &CloneRecord> =
            records.iter().map(|r| (r.parent, r)).collect();
        assert_eq!(by_parent[&ids[0]].assignments[0].assigned, 1.0 - 0.7);
        assert_eq!(by_parent[&ids[1]].assignments[0].assigned, 1.0 - 0.3);
        // row {0.7, 0.3, 0.3, 0.7} renormalizes to sum 1
        assert!((sim.scores.row_sum(0) - 1.0).abs() < 1e-12);
        assert!((sim.scores.score(0, ids[0]) - 0.35).abs() < 1e-12);
    }

    #[test]
    fn clone_skips_devices_without_parent() {
        let mut sim = Simulation::new(tiny_config(2), tiny_shards(2, 5)).unwrap();
        let m2 = {
            let w = sim.registry.weights(ModelId(1)).clone();
            sim.registry.register(w, Some(ModelId(1)), 1)
        };
        // device 0 holds both, device 1 only model 1
        sim.scores.set(0, ModelId(1), 0.6);
        sim.scores.set(0, m2, 0.4);
        let records = sim.clone_models(3);
        let rec_m2 = records.iter().find(|r| r.parent == m2).unwrap();
        assert_eq!(rec_m2.assignments.len(), 1);
        assert_eq!(rec_m2.assignments[0].device, 0);
        assert_eq!(sim.scores.score(1, rec_m2.clone), 0.0);
    }

    #[test]
    fn single_device_round_adopts_its_training() {
        use crate::rng;
        let mut cfg = tiny_config(1);
        cfg.devices_per_round = 1;
        cfg.milestones.clear();
        let shards = tiny_shards(1, 6);
        let mut sim = Simulation::new(cfg.clone(), shards.clone()).unwrap();
        let start = sim.registry.weights(ModelId(1)).clone();
        sim.run_round().unwrap();

        let mut expect_rng = rng::stream(cfg.seed, "local-train", &[1, 0, 1]);
        let expected = sgd_train(
            &start,
            &shards[0].train,
            cfg.local_epochs,
            cfg.learning_rate,
            cfg.batch_size,
            &mut expect_rng,
        )
        .unwrap();
        assert_eq!(sim.registry.weights(ModelId(1)).params(), expected.params());
    }

    #[test]
    fn rounds_deterministic() {
        let cfg = tiny_config(6);
        let mut a = Simulation::new(cfg.clone(), tiny_shards(6, 7)).unwrap();
        let mut b = Simulation::new(cfg, tiny_shards(6, 7)).unwrap();
        for _ in 0..6 {
            let ma = a.run_round().unwrap();
            let mb = b.run_round().unwrap();
            assert_eq!(ma, mb);
        }
    }

    #[test]
    fn device_performance_uses_score_argmax() {
        let (sim, ids) = sim_with_row(&[0.6, 0.4]);
        let by_best = sim.device_performance(0).unwrap();
        let direct =
            evaluate_accuracy(sim.registry.weights(ids[0]), &sim.shards[0].test).unwrap();
        assert_eq!(by_best, direct);
    }

    #[test]
    fn rounds_exhausted() {
        let mut cfg = tiny_config(2);
        cfg.total_rounds = 1;
        cfg.milestones.clear();
        let mut sim = Simulation::new(cfg, tiny_shards(2, 8)).unwrap();
        sim.run_round().unwrap();
        assert!(matches!(sim.run_round(), Err(Error::RoundsExhausted)));
    }
}
