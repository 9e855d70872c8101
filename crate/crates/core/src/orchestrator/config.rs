//! Run configuration. Precedence for overridable settings:
//! command-line flag > environment variable > config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::{parse_value, ArchDescriptor};
use crate::controller::RemoteConfig;
use crate::data::{
    apply_splits, generate_synthetic, parse_ts, DatasetBundle, ModalitySpec, SyntheticSpec, DEFAULT_FRACTIONS,
};
use crate::nn::TrainProtocol;
use crate::protocol::{decode, Clock};
use crate::validation::Rejections;

pub const ENV_SEED: &str = "EXPERT_NAS_SEED";
pub const ENV_WORKERS: &str = "EXPERT_NAS_WORKERS";
pub const ENV_BUDGET: &str = "EXPERT_NAS_BUDGET";
pub use crate::controller::ENDPOINT_ENV as ENV_ENDPOINT;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic {
        spec: SyntheticSpec,
    },
    /// A `.ts` file; `modalities` partitions its variates (default: one
    /// modality holding every variate).
    Ts {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        modalities: Option<ModalitySpec>,
    },
    /// A cached bundle written by [`DatasetBundle::cache`].
    Bundle {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDescriptor {
    Baseline,
    DenseOnly,
    #[serde(untagged)]
    Document(serde_json::Value),
}

impl Default for InitialDescriptor {
    fn default() -> Self {
        InitialDescriptor::Baseline
    }
}

impl InitialDescriptor {
    pub fn resolve(&self) -> Result<ArchDescriptor, Rejections> {
        match self {
            InitialDescriptor::Baseline => Ok(ArchDescriptor::baseline()),
            InitialDescriptor::DenseOnly => Ok(ArchDescriptor::dense_only()),
            InitialDescriptor::Document(v) => parse_value(v).map_err(|e| prefix(e, "initial_descriptor")),
        }
    }
}

fn prefix(e: Rejections, p: &str) -> Rejections {
    Rejections(
        e.0.into_iter()
            .map(|mut r| {
                r.path = crate::validation::join(p, if r.path == "$" { "" } else { &r.path })
                    .trim_end_matches('.')
                    .to_string();
                r
            })
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerConfig {
    Heuristic,
    Remote(RemoteConfig),
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig::Heuristic
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultConfig {
    /// Cycles whose candidate training gets a poisoned input value.
    #[serde(default)]
    pub cycles: Vec<u64>,
}

fn default_fractions() -> [f64; 3] {
    DEFAULT_FRACTIONS
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u64,
    pub dataset: DatasetSource,
    #[serde(default = "default_fractions")]
    pub split_fractions: [f64; 3],
    /// Defaults to the master seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
    pub protocol: TrainProtocol,
    /// Protocol for fusion and end-to-end training; defaults to `protocol`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion_protocol: Option<TrainProtocol>,
    pub budget: u64,
    #[serde(default)]
    pub controller: ControllerConfig,
    pub master_seed: u64,
    #[serde(default)]
    pub initial_descriptor: InitialDescriptor,
    /// Parallel expert trainings. Does not affect results.
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub clock: Clock,
    #[serde(default = "yes")]
    pub share_learning_curves: bool,
    #[serde(default)]
    pub fault_injection: FaultConfig,
    /// Default run directory for the command line. Not part of the hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_dir: Option<PathBuf>,
}

/// Values from flags or the environment that override the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub budget: Option<u64>,
    pub endpoint: Option<String>,
}

impl Overrides {
    /// `self` wins over `lower` field by field.
    pub fn over(self, lower: Overrides) -> Overrides {
        Overrides {
            seed: self.seed.or(lower.seed),
            workers: self.workers.or(lower.workers),
            budget: self.budget.or(lower.budget),
            endpoint: self.endpoint.or(lower.endpoint),
        }
    }
}

impl RunConfig {
    pub fn synthetic(spec: SyntheticSpec, budget: u64, master_seed: u64) -> Self {
        Self {
            schema_version: crate::protocol::SCHEMA_VERSION,
            dataset: DatasetSource::Synthetic { spec },
            split_fractions: DEFAULT_FRACTIONS,
            split_seed: None,
            protocol: TrainProtocol::default(),
            fusion_protocol: None,
            budget,
            controller: ControllerConfig::Heuristic,
            master_seed,
            initial_descriptor: InitialDescriptor::Baseline,
            workers: 1,
            clock: Clock::Logical,
            share_learning_curves: true,
            fault_injection: FaultConfig::default(),
            run_dir: None,
        }
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, Rejections> {
        let c: RunConfig = decode(bytes)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, Rejections> {
        let bytes =
            std::fs::read(path).map_err(|e| Rejections::single("$", format!("cannot read config: {}", e.kind())))?;
        Self::parse(&bytes)
    }

    pub fn validate(&self) -> Result<(), Rejections> {
        let mut errs = Vec::new();
        if self.schema_version != crate::protocol::SCHEMA_VERSION {
            errs.push(crate::validation::Rejection::new(
                "schema_version",
                "schema version mismatch",
            ));
        }
        if self.workers == 0 {
            errs.push(crate::validation::Rejection::new("workers", "must be at least 1"));
        }
        if self.protocol.batch_size == 0 || self.protocol.max_epochs == 0 {
            errs.push(crate::validation::Rejection::new(
                "protocol",
                "batch_size and max_epochs must be positive",
            ));
        }
        let s: f64 = self.split_fractions.iter().sum();
        if self.split_fractions.iter().any(|&f| f <= 0.0) || (s - 1.0).abs() > 1e-9 {
            errs.push(crate::validation::Rejection::new(
                "split_fractions",
                "must be positive and sum to 1",
            ));
        }
        if let Err(mut e) = self.initial_descriptor.resolve() {
            errs.append(&mut e.0);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Rejections(errs))
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.master_seed = s;
        }
        if let Some(w) = o.workers {
            self.workers = w.max(1);
        }
        if let Some(b) = o.budget {
            self.budget = b;
        }
        if let Some(e) = &o.endpoint {
            if let ControllerConfig::Remote(remote) = &mut self.controller {
                remote.endpoint = e.clone();
            }
        }
    }

    pub fn fusion_protocol(&self) -> &TrainProtocol {
        self.fusion_protocol.as_ref().unwrap_or(&self.protocol)
    }

    pub fn to_text(&self) -> String {
        crate::protocol::to_canonical(self)
    }

    /// Hash pinned in the ledger. Execution-only settings (`workers`,
    /// `run_dir`) are excluded so a run may be resumed with a different
    /// worker count or from a moved directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.workers = 1;
        c.run_dir = None;
        hex::encode(Sha256::digest(c.to_text().as_bytes()))
    }

    /// Builds the dataset with its fixed splits. Relative paths resolve
    /// against `base`.
    pub fn load_dataset(&self, base: &Path) -> Result<DatasetBundle, String> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let bundle = match &self.dataset {
            DatasetSource::Synthetic { spec } => generate_synthetic(spec).map_err(|e| e.to_string())?,
            DatasetSource::Ts { path, modalities } => {
                let bytes = std::fs::read(resolve(path)).map_err(|e| format!("dataset: {}", e.kind()))?;
                let ts = parse_ts(&bytes).map_err(|e| e.to_string())?;
                let b = DatasetBundle::from_ts(&ts, &bytes).map_err(|e| e.to_string())?;
                match modalities {
                    Some(m) => b.with_modalities(m.clone()).map_err(|e| e.to_string())?,
                    None => b,
                }
            }
            DatasetSource::Bundle { path } => DatasetBundle::load(&resolve(path)).map_err(|e| e.to_string())?,
        };
        if bundle.splits.is_some() {
            return Ok(bundle);
        }
        apply_splits(
            bundle,
            self.split_fractions,
            self.split_seed.unwrap_or(self.master_seed),
        )
        .map_err(|e| e.to_string())
    }
}
