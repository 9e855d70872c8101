mod common;

use common::gradcheck::{composition, layer_cases, max_rel_error, TOLERANCE};

const SEEDS: u64 = 10;

#[test]
fn every_layer_kind_matches_finite_differences() {
    for seed in 0..SEEDS {
        for mut case in layer_cases(seed) {
            let err = max_rel_error(&mut case.graph, &case.input, seed);
            assert!(err < TOLERANCE, "{} seed {seed}: relative error {err:e}", case.name);
        }
    }
}

#[test]
fn random_compositions_match_finite_differences() {
    for seed in 0..SEEDS {
        for i in 0..3 {
            let mut case = composition(seed, i);
            let err = max_rel_error(&mut case.graph, &case.input, seed);
            assert!(err < TOLERANCE, "{} seed {seed}: relative error {err:e}", case.name);
        }
    }
}
