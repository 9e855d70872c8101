//! Drives a search with recorded controller responses: a valid proposal,
//! one needing repair, and noise that falls back to the heuristic.

use expert_nas::controller::RemoteConfig;
use expert_nas::data::{Difficulty, SyntheticSpec};
use expert_nas::nn::TrainProtocol;
use expert_nas::orchestrator::{run_search, ControllerConfig, InitialDescriptor, RunConfig, RunOptions};
use expert_nas::protocol::{read_ledger, LedgerEvent};

fn main() {
    let responses = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/remote/responses.json");
    let spec = SyntheticSpec {
        seed: 5,
        samples: 60,
        modalities: 2,
        classes: 3,
        series_len: 16,
        dims_per_modality: 1,
        difficulty: Difficulty::Hard,
    };
    let mut config = RunConfig::synthetic(spec, 3, 5);
    config.initial_descriptor = InitialDescriptor::DenseOnly;
    config.protocol = TrainProtocol {
        max_epochs: 3,
        ..TrainProtocol::default()
    };
    config.controller = ControllerConfig::Remote(RemoteConfig {
        endpoint: format!("fixture:{responses}"),
        backoff_ms: 0,
        ..RemoteConfig::default()
    });
    let dir = tempfile::tempdir().unwrap();
    run_search(dir.path(), &config, RunOptions::default()).unwrap();
    for rec in read_ledger(&dir.path().join("ledger.jsonl")).unwrap() {
        if let LedgerEvent::Proposal {
            candidate_id,
            controller,
            rationale,
            repairs,
            ..
        } = rec.event
        {
            println!("cycle {} {candidate_id} [{controller}] {rationale}", rec.cycle);
            for r in repairs {
                for x in r.rejections {
                    println!("    repair attempt {}: {x}", r.attempt);
                }
            }
        }
    }
}
