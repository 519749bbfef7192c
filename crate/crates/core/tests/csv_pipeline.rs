//! The same synthetic data reached through CSV files or generated in memory
//! must give the same metrics.

use std::path::Path;

use rdbssl::pipeline::{run_pipeline, ExperimentConfig};
use rdbssl::synth::TrapSpec;

const GRID: &str = r#"
[encoder]
layers = 2
hidden = 8

[pretrain]
epochs = 3

[eval]
s_percent = [50.0, 100.0]

[run]
strategies = ["untrained", "generative", "hybrid"]
seeds = [0, 1]
output = "OUT"
"#;

#[test]
fn csv_source_matches_generated_source() {
    let dir = tempfile::tempdir().unwrap();
    let spec = TrapSpec::GraphMutualNoise {
        n_nodes: 150,
        edge_prob: 0.03,
        rho: 0.7,
    };
    spec.generate(4).unwrap().write(dir.path().join("csv")).unwrap();

    let trap = format!(
        "[data]\nname = \"gmn\"\nseed = 4\n[data.trap]\nkind = \"graph_mutual_noise\"\nn_nodes = 150\nedge_prob = 0.03\nrho = 0.7\n{}",
        GRID.replace("OUT", &dir.path().join("a").display().to_string())
    );
    let csv = format!(
        "[data]\nname = \"gmn\"\nseed = 4\ncsv_dir = \"csv\"\n{}",
        GRID.replace("OUT", &dir.path().join("b").display().to_string())
    );
    let a = run_pipeline(&ExperimentConfig::parse(&trap, Path::new(".")).unwrap()).unwrap();
    let b = run_pipeline(&ExperimentConfig::parse(&csv, dir.path()).unwrap()).unwrap();
    assert_eq!(std::fs::read(&a.metrics_csv).unwrap(), std::fs::read(&b.metrics_csv).unwrap());
    let hashes = |m: &rdbssl::pipeline::RunManifest| m.checkpoints.iter().map(|c| c.sha256.clone()).collect::<Vec<_>>();
    assert_eq!(hashes(&a), hashes(&b));
}
