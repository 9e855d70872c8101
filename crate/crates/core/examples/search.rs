//! A complete search in a temporary run directory with the heuristic
//! controller, followed by the reports it leaves behind.
//!
//! `cargo run --example search -- [budget]`

use expert_nas::data::{Difficulty, SyntheticSpec};
use expert_nas::nn::TrainProtocol;
use expert_nas::orchestrator::{run_search, InitialDescriptor, RunConfig, RunOptions, MANIFEST_FILE};

fn main() {
    let budget = std::env::args().nth(1).and_then(|b| b.parse().ok()).unwrap_or(5);
    let spec = SyntheticSpec {
        seed: 7,
        samples: 150,
        modalities: 2,
        classes: 3,
        series_len: 32,
        dims_per_modality: 1,
        difficulty: Difficulty::Hard,
    };
    let mut config = RunConfig::synthetic(spec, budget, 7);
    config.initial_descriptor = InitialDescriptor::DenseOnly;
    config.protocol = TrainProtocol {
        max_epochs: 8,
        ..TrainProtocol::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let status = run_search(dir.path(), &config, RunOptions::default()).expect("search runs");
    println!("status {}\n", status.as_str());
    println!(
        "{}",
        std::fs::read_to_string(dir.path().join("report_table.csv")).unwrap()
    );
    println!("{}", std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap());
}
