//! Kills a run at a chosen storage write, resumes it and checks that the
//! ledger matches an uninterrupted run byte for byte.
//!
//! `cargo run --example crash_resume -- [write-number]`

use expert_nas::data::{Difficulty, SyntheticSpec};
use expert_nas::nn::TrainProtocol;
use expert_nas::orchestrator::{run_search, InitialDescriptor, RunConfig, RunOptions, LEDGER_FILE};
use expert_nas::protocol::Storage;

fn config() -> RunConfig {
    let spec = SyntheticSpec {
        seed: 1,
        samples: 60,
        modalities: 2,
        classes: 3,
        series_len: 16,
        dims_per_modality: 1,
        difficulty: Difficulty::Hard,
    };
    let mut c = RunConfig::synthetic(spec, 3, 1);
    c.initial_descriptor = InitialDescriptor::DenseOnly;
    c.protocol = TrainProtocol {
        max_epochs: 3,
        ..TrainProtocol::default()
    };
    c
}

fn main() {
    let n = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(17);
    let root = tempfile::tempdir().unwrap();
    let (clean, crashed) = (root.path().join("clean"), root.path().join("crashed"));

    let storage = Storage::new();
    let opts = RunOptions {
        storage: storage.clone(),
        ..RunOptions::default()
    };
    run_search(&clean, &config(), opts).unwrap();
    println!("uninterrupted run: {} storage writes", storage.writes());

    let opts = RunOptions {
        storage: Storage::crash_at(n),
        ..RunOptions::default()
    };
    match run_search(&crashed, &config(), opts) {
        Err(e) => println!("crashed at write {n}: {e}"),
        Ok(_) => println!("write {n} is past the end of the run"),
    }
    let opts = RunOptions {
        verify_replay: true,
        ..RunOptions::default()
    };
    let status = run_search(&crashed, &config(), opts).unwrap();
    let same = std::fs::read(clean.join(LEDGER_FILE)).unwrap() == std::fs::read(crashed.join(LEDGER_FILE)).unwrap();
    println!("resumed: status {}, ledger identical: {same}", status.as_str());
}
