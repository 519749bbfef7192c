use std::path::Path;
use std::process::{Command, Output};

fn rdbssl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdbssl"))
        .args(args)
        .args(["--log-level", "error"])
        .output()
        .unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = r#"
[data.trap]
kind = "graph_mutual_noise"
n_nodes = 120
edge_prob = 0.03
rho = 0.8

[encoder]
layers = 2
hidden = 8

[pretrain]
epochs = 2

[run]
strategies = ["untrained", "infonode"]
seeds = [0, 1]
output = "out"
"#;

#[test]
fn selftest_passes() {
    let out = rdbssl(&["selftest"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 5, "{text}");
}

#[test]
fn run_writes_artifacts_and_seed_override_applies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("artifacts");
    let out = rdbssl(&["run", "--config", &cfg, "--output", out_dir.to_str().unwrap(), "--seed-override", "9"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("infonode"), "{stdout}");
    let csv = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let seeds: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(4).unwrap()).collect();
    assert_eq!(seeds, vec!["9", "9"]);
    for f in ["manifest.json", "report.json", "index.jsonl", "checkpoints/gcn/infonode/seed-9.ckpt", "data/entity.csv"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
}

#[test]
fn single_stages_via_subcommands_and_stage_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("staged");
    let o = out_dir.to_str().unwrap();
    assert!(rdbssl(&["synth", "--config", &cfg, "--output", o]).status.success());
    assert!(out_dir.join("data/metadata.json").is_file());
    assert!(rdbssl(&["run", "--stage", "pretrain", "--config", &cfg, "--output", o]).status.success());
    assert!(rdbssl(&["probe", "--config", &cfg, "--output", o]).status.success());
    assert!(rdbssl(&["report", "--config", &cfg, "--output", o]).status.success());
    assert!(out_dir.join("report.csv").is_file());
    assert!(!out_dir.join("manifest.json").exists());
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();

    let typo = write_config(dir.path(), &SMALL.replace("epochs = 2", "epoch = 2"));
    assert_eq!(rdbssl(&["run", "--config", &typo]).status.code(), Some(1));
    assert_eq!(rdbssl(&["run"]).status.code(), Some(1));
    assert_eq!(rdbssl(&["run", "--config", "/does/not/exist.toml"]).status.code(), Some(1));

    // probe before any checkpoint exists: data error plus a FAILED marker
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("probe-first");
    let out = rdbssl(&["probe", "--config", &cfg, "--output", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(std::fs::read_to_string(out_dir.join("FAILED")).unwrap().contains("stage: probe"));

    // an absurd learning rate drives the parameters to infinity
    let blowup = write_config(dir.path(), &SMALL.replace("epochs = 2", "epochs = 2\nlearning_rate = 1e307"));
    let out_dir = dir.path().join("blowup");
    let out = rdbssl(&["run", "--config", &blowup, "--output", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(out_dir.join("FAILED")).unwrap().contains("stage: pretrain"));
}
