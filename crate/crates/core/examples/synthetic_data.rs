//! Generates a synthetic multimodal dataset, applies the fixed splits and
//! prints its shape, split sizes and content hash.
//!
//! `cargo run --example synthetic_data -- [separable|hard] [seed]`

use expert_nas::data::{apply_splits, generate_synthetic, Difficulty, Split, SyntheticSpec, DEFAULT_FRACTIONS};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let difficulty = match args.first().map(String::as_str) {
        Some("hard") => Difficulty::Hard,
        _ => Difficulty::Separable,
    };
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let spec = SyntheticSpec {
        seed,
        samples: 500,
        modalities: 2,
        classes: 3,
        series_len: 64,
        dims_per_modality: 2,
        difficulty,
    };
    let bundle = apply_splits(generate_synthetic(&spec).unwrap(), DEFAULT_FRACTIONS, seed).unwrap();
    let splits = bundle.splits().unwrap();
    println!(
        "{}: {} samples of [{}, {}]",
        bundle.name,
        bundle.len(),
        bundle.series_len,
        bundle.variates
    );
    for m in 0..bundle.n_modalities() {
        println!("  modality {m}: variates {:?}", bundle.modalities.0[m]);
    }
    for split in [Split::Train, Split::Validation, Split::Test] {
        let rows = splits.rows(split);
        let mut per_class = vec![0; bundle.n_classes()];
        rows.iter().for_each(|&r| per_class[bundle.labels[r]] += 1);
        println!("  {split:?}: {} rows, per class {per_class:?}", rows.len());
    }
    println!("content hash {}", bundle.content_hash());
}
