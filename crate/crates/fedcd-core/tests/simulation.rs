//! Multi-round runs checked against the protocol's structural
//! invariants, plus determinism and the degenerate single-model
//! configuration.

use fedcd_core::data::{build_device_shards, ArchetypeSpec, DeviceShard, GlobalDataset};
use fedcd_core::engine::{aggregate_model, ModelId, Simulation, SimulationConfig, Strategy};
use fedcd_core::model::sgd_train;
use fedcd_core::rng;

fn shards(n_devices: usize, seed: u64) -> Vec<DeviceShard> {
    let data = GlobalDataset::synthetic(4, 6, 300, 2.0, seed).unwrap();
    let specs: Vec<ArchetypeSpec> = (0..n_devices)
        .map(|d| ArchetypeSpec::Hierarchical {
            meta_labels: if d % 4 < 2 { vec![0, 1] } else { vec![2, 3] },
            focus_label: d % 4,
            bias: 0.65,
        })
        .collect();
    build_device_shards(&data, &specs, 80, 0.2, 0.2, seed).unwrap()
}

fn config(n_devices: usize) -> SimulationConfig {
    SimulationConfig {
        n_devices,
        devices_per_round: (n_devices / 2).max(1),
        total_rounds: 28,
        milestones: vec![3, 8, 14],
        hidden_layers: vec![8],
        ..SimulationConfig::default()
    }
}

#[test]
fn protocol_invariants_hold_every_round() {
    let cfg = config(8);
    let mut sim = Simulation::new(cfg.clone(), shards(8, 11)).unwrap();
    let mut last_created = sim.registry().total_created();

    while sim.round() < cfg.total_rounds {
        let metrics = sim.run_round().unwrap();
        let round = metrics.round;

        // scores: every device's alive scores sum to 1, nobody is left
        // without a model, and nonzero scores reference alive models
        for d in 0..cfg.n_devices {
            let sum = sim.scores().row_sum(d);
            assert!((sum - 1.0).abs() < 1e-9, "round {round} device {d}: sum {sum}");
            assert!(sim.scores().model_count(d) >= 1, "round {round} device {d} starved");
            for (&m, &c) in sim.scores().row(d) {
                assert!(c > 0.0);
                assert!(sim.registry().is_alive(m), "round {round}: dead model {m} scored");
            }
        }

        // registry: alive count bounded by doublings, creation monotone
        let bound = 1usize << cfg.milestones_passed(round);
        assert!(
            metrics.alive_models_total <= bound,
            "round {round}: {} alive > 2^{}",
            metrics.alive_models_total,
            cfg.milestones_passed(round)
        );
        assert!(metrics.created_models_total >= last_created);
        last_created = metrics.created_models_total;

        // per-round metrics stay in range
        for dev in &metrics.devices {
            assert!((0.0..=1.0).contains(&dev.test_accuracy));
            assert!(dev.alive_models_device >= 1);
        }
        assert_eq!(metrics.devices.len(), cfg.n_devices);
    }

    // lineage: every clone was created at a milestone from an older id
    for (id, entry) in sim.registry().iter() {
        if let Some(parent) = entry.parent {
            assert!(cfg.milestones.contains(&entry.created_round), "model {id}");
            assert!(parent < id);
        }
    }
    assert!(!sim.clone_log().is_empty());
}

#[test]
fn identical_configs_reproduce_metrics_exactly() {
    let cfg = config(8);
    let mut a = Simulation::new(cfg.clone(), shards(8, 21)).unwrap();
    let mut b = Simulation::new(cfg, shards(8, 21)).unwrap();
    let ma = a.run_to_end().unwrap();
    let mb = b.run_to_end().unwrap();
    assert_eq!(ma, mb);
}

/// Without milestones the engine must walk the exact trajectory of a
/// directly-coded federated-averaging loop.
#[test]
fn no_milestones_equals_plain_federated_averaging() {
    let mut cfg = config(5);
    cfg.n_devices = 5;
    cfg.devices_per_round = 3;
    cfg.total_rounds = 8;
    cfg.milestones = vec![];
    cfg.strategy = Strategy::FedAvg;
    let shard_set = shards(5, 31);

    let mut sim = Simulation::new(cfg.clone(), shard_set.clone()).unwrap();

    // reference: independent round loop with unweighted averaging
    let mut reference = sim.registry().weights(ModelId(1)).clone();
    for round in 1..=cfg.total_rounds {
        let picked = sim.select_round_devices(round);
        let mut updates = Vec::new();
        for &d in &picked {
            let mut r = rng::stream(cfg.seed, "local-train", &[round as u64, d as u64, 1]);
            updates.push(
                sgd_train(
                    &reference,
                    &shard_set[d].train,
                    cfg.local_epochs,
                    cfg.learning_rate,
                    cfg.batch_size,
                    &mut r,
                )
                .unwrap(),
            );
        }
        let contributions: Vec<(f64, &fedcd_core::model::ModelWeights)> =
            updates.iter().map(|w| (1.0, w)).collect();
        reference = aggregate_model(&contributions).unwrap().unwrap();

        sim.run_round().unwrap();
        let engine_params = sim.registry().weights(ModelId(1)).params();
        for (e, r) in engine_params.iter().zip(reference.params()) {
            assert!((e - r).abs() < 1e-12, "round {round}");
        }
    }
    assert_eq!(sim.registry().total_created(), 1);
    assert_eq!(sim.registry().alive_count(), 1);
}
