//! Prints exactly what a controller receives after a short run: the
//! whitelisted summary and the manifest. Nothing here is derived from
//! individual data values.

use std::sync::{Arc, Mutex};

use expert_nas::data::{Difficulty, SyntheticSpec};
use expert_nas::nn::TrainProtocol;
use expert_nas::orchestrator::{run_search, InitialDescriptor, RunConfig, RunOptions};

fn main() {
    let spec = SyntheticSpec {
        seed: 2,
        samples: 90,
        modalities: 2,
        classes: 3,
        series_len: 16,
        dims_per_modality: 1,
        difficulty: Difficulty::Hard,
    };
    let mut config = RunConfig::synthetic(spec, 1, 2);
    config.initial_descriptor = InitialDescriptor::DenseOnly;
    config.protocol = TrainProtocol {
        max_epochs: 4,
        ..TrainProtocol::default()
    };
    let tap = Arc::new(Mutex::new(Vec::new()));
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        tap: Some(tap.clone()),
        ..RunOptions::default()
    };
    run_search(dir.path(), &config, opts).unwrap();
    let bytes = tap.lock().unwrap();
    println!("{}", String::from_utf8_lossy(&bytes));
}
