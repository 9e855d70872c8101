//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;
pub mod runs;

use std::path::PathBuf;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn fixture(rel: &str) -> PathBuf {
    fixtures().join(rel)
}
