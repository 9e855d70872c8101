//! Trains one binary expert on a synthetic dataset and prints its metrics.
//!
//! `cargo run --example train_expert -- [modality] [class] [epochs]`

use std::time::Instant;

use expert_nas::arch::ArchDescriptor;
use expert_nas::data::{apply_splits, generate_synthetic, Difficulty, SyntheticSpec, DEFAULT_FRACTIONS};
use expert_nas::experts::{train_expert, ExpertKey, FaultInjection};
use expert_nas::nn::TrainProtocol;
use expert_nas::seed::derive_seed;

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let key = ExpertKey::new(*args.first().unwrap_or(&0), *args.get(1).unwrap_or(&1));
    let spec = SyntheticSpec {
        seed: 7,
        samples: 500,
        modalities: 2,
        classes: 3,
        series_len: 64,
        dims_per_modality: 2,
        difficulty: Difficulty::Separable,
    };
    let bundle = apply_splits(generate_synthetic(&spec).unwrap(), DEFAULT_FRACTIONS, 7).unwrap();
    let protocol = TrainProtocol {
        max_epochs: *args.get(2).unwrap_or(&10),
        ..TrainProtocol::default()
    };
    let start = Instant::now();
    let out = train_expert(
        key,
        &ArchDescriptor::baseline(),
        &bundle,
        &protocol,
        derive_seed(7, 0, key.modality as u64, key.class as u64),
        FaultInjection::default(),
    );
    println!(
        "expert {key}: {:?} in {:.1}s",
        out.status,
        start.elapsed().as_secs_f64()
    );
    if let (Some(m), Some(c)) = (out.metrics, out.curve) {
        println!(
            "  f1 {:.4}  auc {:?}  balanced accuracy {:.4}  epochs {}",
            m.f1, m.auc, m.balanced_accuracy, c.epochs_run
        );
    }
}
