//! Dataset ingestion, synthetic generation, modality grouping and splits.

mod bundle;
mod synthetic;
mod ts;

pub use bundle::{apply_splits, DatasetBundle, ModalitySpec, Provenance, Split, Splits};
pub use synthetic::{generate_synthetic, Difficulty, SyntheticSpec};
pub use ts::{parse_ts, serialize_ts, TsData, TsError};

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.6, 0.2, 0.2];

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error(transparent)]
    Ts(#[from] TsError),
    #[error("shape: {0}")]
    Shape(String),
    #[error("modality spec: {0}")]
    Modality(String),
    #[error("split: {0}")]
    Split(String),
    #[error("bundle has no split assignment")]
    NoSplits,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
