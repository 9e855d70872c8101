//! Staged training: one frozen expert per (modality, class), then a fusion
//! network over their concatenated embeddings.

use std::sync::Arc;

use expert_nas::arch::{embedding_width, ArchDescriptor};
use expert_nas::data::{apply_splits, generate_synthetic, Difficulty, SyntheticSpec, DEFAULT_FRACTIONS};
use expert_nas::experts::{expert_grid, train_expert, FaultInjection, Prepared};
use expert_nas::fusion::{train_fusion, ExpertSet, ExpertSlot};
use expert_nas::nn::TrainProtocol;

fn main() {
    let spec = SyntheticSpec {
        seed: 3,
        samples: 150,
        modalities: 2,
        classes: 3,
        series_len: 32,
        dims_per_modality: 1,
        difficulty: Difficulty::Hard,
    };
    let bundle = apply_splits(generate_synthetic(&spec).unwrap(), DEFAULT_FRACTIONS, 3).unwrap();
    let desc = ArchDescriptor::dense_only();
    let protocol = TrainProtocol {
        max_epochs: 10,
        ..TrainProtocol::default()
    };
    let mut set = ExpertSet::new(bundle.n_modalities(), bundle.n_classes());
    for (i, key) in expert_grid(bundle.n_modalities(), bundle.n_classes())
        .into_iter()
        .enumerate()
    {
        let out = train_expert(key, &desc, &bundle, &protocol, i as u64, FaultInjection::default());
        let f1 = out.metrics.as_ref().map_or(0.0, |m| m.f1);
        println!("expert {key}: {:?}, validation F1 {f1:.3}", out.status);
        let slot = match out.model {
            Some(model) => ExpertSlot::Trained {
                model,
                data: Arc::new(Prepared::new(&bundle, key.modality, &desc)),
            },
            None => ExpertSlot::Zero {
                width: embedding_width(&desc, bundle.modality_shape(key.modality)).unwrap(),
            },
        };
        set.insert(key, slot);
    }
    let fused = train_fusion(&mut set, &bundle, &protocol, 99).expect("fusion trains");
    println!(
        "fusion: validation accuracy {:.3}, macro-F1 {:.3}",
        fused.validation.accuracy, fused.validation.macro_f1
    );
}
