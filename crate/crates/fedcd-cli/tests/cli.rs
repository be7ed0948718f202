//! End-to-end checks of the `fedcd` binary: exit codes, strict config
//! handling, override precedence, output layout, and the compare/sweep
//! commands.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fedcd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedcd"))
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let out = dir.join("out");
    let text = format!(
        r#"
seed = 3
output_dir = "{}"
[rounds]
total = 5
milestones = [2]
devices_per_round = 4
[data]
classes = 4
feature_dim = 4
per_class_pool = 150
samples_per_device = 48
devices_per_archetype = 2
spread = 1.0
[trainer]
hidden_layers = [6]
batch_size = 16
{extra}
"#,
        out.display()
    );
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn run_writes_outputs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let output = fedcd().arg("run").arg(&config).output().unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    let csv = dir.path().join("out/rounds.csv");
    assert!(csv.exists());
    let text = fs::read_to_string(csv).unwrap();
    // header + 5 rounds x 8 devices
    assert_eq!(text.lines().count(), 41);
    assert!(dir.path().join("out/summary.json").exists());
}

#[test]
fn override_is_echoed_in_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let output = fedcd().arg("run").arg(&config).arg("--seed=2").output().unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["config"]["seed"], 2);
    assert_eq!(summary["config"]["rounds"]["total"], 5);
    assert!(summary["total_uplink_bytes"].as_u64().unwrap() > 0);
}

#[test]
fn unknown_config_key_exits_two_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "foo = 1\n").unwrap();
    let output = fedcd().arg("run").arg(&config).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("foo"), "{}", stderr(&output));
}

#[test]
fn unknown_override_key_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let output = fedcd().arg("run").arg(&config).arg("--frobnicate=1").output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("frobnicate"));
}

#[test]
fn missing_csv_dataset_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let output = fedcd()
        .arg("run")
        .arg(&config)
        .arg("--data.csv_path=/nonexistent/data.csv")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3), "{}", stderr(&output));
}

#[test]
fn csv_dataset_import_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = String::new();
    let mut state = 41u64;
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 33) as f64 / (1u64 << 31) as f64 - 0.5
    };
    for label in 0..4 {
        for _ in 0..150 {
            let center = label as f64;
            lines.push_str(&format!(
                "{:.4},{:.4},{:.4},{:.4},{label}\n",
                center + next(),
                center - next(),
                next(),
                next()
            ));
        }
    }
    let data_path = dir.path().join("data.csv");
    fs::write(&data_path, lines).unwrap();
    let config = small_config(dir.path(), "[data.hierarchical]\nbias = 0.65\n");
    let output = fedcd()
        .arg("run")
        .arg(&config)
        .arg(format!("--data.csv_path={}", data_path.display()))
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    assert!(dir.path().join("out/rounds.csv").exists());
}

#[test]
fn output_root_env_overrides_location() {
    let dir = tempfile::tempdir().unwrap();
    let root = tempfile::tempdir().unwrap();
    let config_text = r#"
seed = 3
output_dir = "relative-out"
[rounds]
total = 3
milestones = []
devices_per_round = 4
[data]
classes = 4
feature_dim = 4
per_class_pool = 150
samples_per_device = 48
devices_per_archetype = 2
[trainer]
hidden_layers = [6]
batch_size = 16
"#;
    let config = dir.path().join("exp.toml");
    fs::write(&config, config_text).unwrap();
    let output = fedcd()
        .arg("run")
        .arg(&config)
        .env("FEDCD_OUTPUT_ROOT", root.path())
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    assert!(root.path().join("relative-out/rounds.csv").exists());
}

#[test]
fn compare_degenerate_config_has_zero_delta() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let output = fedcd()
        .arg("compare")
        .arg(&config)
        .arg("--rounds.milestones=[]")
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    assert!(dir.path().join("out/fedcd/rounds.csv").exists());
    assert!(dir.path().join("out/fedavg/rounds.csv").exists());
    let compare: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/compare.json")).unwrap())
            .unwrap();
    let deltas = compare["final_accuracy_delta_by_archetype"].as_object().unwrap();
    assert_eq!(deltas.len(), 4, "one delta per archetype");
    for (tag, delta) in deltas {
        assert!(delta.as_f64().unwrap().abs() < 1e-12, "{tag}: {delta}");
    }
}

#[test]
fn compare_emits_one_delta_per_archetype() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let output = fedcd().arg("compare").arg(&config).output().unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    let compare: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/compare.json")).unwrap())
            .unwrap();
    assert_eq!(compare["final_accuracy_delta_by_archetype"].as_object().unwrap().len(), 4);
    assert!(compare["shard_digest"].as_str().unwrap().len() == 16);
}

#[test]
fn sweep_writes_one_subdirectory_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let output = fedcd()
        .arg("sweep")
        .arg(&config)
        .arg("--param")
        .arg("bias")
        .arg("--values")
        .arg("0.2,0.4,0.6")
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    for value in ["0.2", "0.4", "0.6"] {
        assert!(dir.path().join(format!("out/bias_{value}/rounds.csv")).exists());
    }
    let sweep = fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    // header + 3 values x 5 rounds
    assert_eq!(sweep.lines().count(), 16);
    assert!(sweep.lines().nth(1).unwrap().starts_with("bias,0.2,1,"));
}

#[test]
fn sweep_unknown_parameter_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "");
    let output = fedcd()
        .arg("sweep")
        .arg(&config)
        .arg("--param")
        .arg("gravity")
        .arg("--values")
        .arg("1,2")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("gravity"));
}
