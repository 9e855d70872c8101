//! Controller-bound summary and the whitelist that guards it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ledger::{LedgerEvent, LedgerRecord, SearchState};
use super::results::{FusedBlock, TargetRecord};
use super::schema::SCHEMA_VERSION;
use crate::arch::ArchDescriptor;
use crate::data::DatasetBundle;
use crate::experts::{expert_grid, ExpertKey};
use crate::nn::TrainProtocol;
use crate::validation::{Rejection, Rejections};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Shape-level facts about the dataset. Nothing here is a sample value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub modalities: usize,
    pub classes: usize,
    pub series_len: usize,
    pub dims: Vec<usize>,
    pub split_sizes: SplitSizes,
    /// Class frequencies over the training split.
    pub class_prevalence: Vec<f64>,
}

impl DatasetMeta {
    pub fn from_bundle(bundle: &DatasetBundle) -> Self {
        let c = bundle.n_classes();
        let (train, validation, test) = match &bundle.splits {
            Some(s) => (s.train.clone(), s.validation.len(), s.test_len()),
            None => ((0..bundle.len()).collect(), 0, 0),
        };
        let mut counts = vec![0usize; c];
        for &i in &train {
            counts[bundle.labels[i]] += 1;
        }
        let n = train.len().max(1) as f64;
        Self {
            modalities: bundle.n_modalities(),
            classes: c,
            series_len: bundle.series_len,
            dims: (0..bundle.n_modalities()).map(|m| bundle.modalities.width(m)).collect(),
            split_sizes: SplitSizes {
                train: train.len(),
                validation,
                test,
            },
            class_prevalence: counts.iter().map(|&k| k as f64 / n).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetInfo {
    pub total: u64,
    pub used: u64,
    pub remaining: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertSummary {
    pub target: ExpertKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_descriptor_hash: Option<String>,
    pub degenerate: bool,
    pub trials: u64,
    /// Descriptor hashes already trained for this expert, in first-use order.
    #[serde(default)]
    pub tried: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleOutcome {
    pub cycle: u64,
    pub candidate_id: String,
    pub descriptor_hash: String,
    pub improved: bool,
    pub record: TargetRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSummary {
    pub schema_version: u64,
    pub cycle: u64,
    pub dataset: DatasetMeta,
    pub protocol: TrainProtocol,
    pub budget: BudgetInfo,
    pub initial_descriptor_hash: String,
    pub experts: Vec<ExpertSummary>,
    pub last_cycle: Vec<CycleOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused: Option<FusedBlock>,
    /// Descriptor documents keyed by hash: every current best plus the
    /// initial descriptor.
    pub descriptors: BTreeMap<String, Value>,
}

impl ControllerSummary {
    pub fn best_f1(&self, key: ExpertKey) -> Option<f64> {
        self.experts.iter().find(|e| e.target == key).and_then(|e| e.best_f1)
    }

    pub fn descriptor(&self, hash: &str) -> Option<ArchDescriptor> {
        self.descriptors
            .get(hash)
            .and_then(|v| crate::arch::parse_value(v).ok())
    }

    /// Starting point for mutating `key`: its best descriptor, or the
    /// initial one if it has never trained successfully.
    pub fn base_descriptor(&self, key: ExpertKey) -> Option<ArchDescriptor> {
        self.experts
            .iter()
            .find(|e| e.target == key)
            .and_then(|e| e.best_descriptor_hash.as_deref())
            .and_then(|h| self.descriptor(h))
            .or_else(|| self.descriptor(&self.initial_descriptor_hash))
    }

    pub fn to_text(&self) -> String {
        super::schema::to_canonical(self)
    }
}

pub struct SummaryInputs<'a> {
    pub state: &'a SearchState,
    pub records: &'a [LedgerRecord],
    pub dataset: &'a DatasetMeta,
    pub protocol: &'a TrainProtocol,
    pub initial: &'a ArchDescriptor,
    /// Descriptor documents by hash, loaded from the run directory.
    pub descriptors: &'a BTreeMap<String, ArchDescriptor>,
    pub share_learning_curves: bool,
}

fn tried_hashes(records: &[LedgerRecord], key: ExpertKey) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in records {
        if let LedgerEvent::Trial {
            descriptor_hash,
            record,
            ..
        } = &r.event
        {
            if record.target == key && !out.contains(descriptor_hash) {
                out.push(descriptor_hash.clone());
            }
        }
    }
    out
}

pub fn summarize_for_controller(inp: SummaryInputs<'_>) -> ControllerSummary {
    let st = inp.state;
    let used = st.cycles_completed;
    let mut descriptors = BTreeMap::new();
    let initial_hash = inp.initial.canonical_hash().as_str().to_string();
    descriptors.insert(initial_hash.clone(), inp.initial.to_value());
    let mut experts = Vec::new();
    for key in expert_grid(inp.dataset.modalities, inp.dataset.classes) {
        let best = st.best.get(&key);
        if let Some(b) = best {
            if let Some(d) = inp.descriptors.get(&b.descriptor_hash) {
                descriptors.insert(b.descriptor_hash.clone(), d.to_value());
            }
        }
        experts.push(ExpertSummary {
            target: key,
            best_f1: best.map(|b| b.f1),
            best_descriptor_hash: best.map(|b| b.descriptor_hash.clone()),
            degenerate: st.degenerate.contains(&key),
            trials: st.cycle_trials.get(&key).copied().unwrap_or(0),
            tried: tried_hashes(inp.records, key),
        });
    }

    let last = inp
        .records
        .iter()
        .filter(|r| matches!(r.event, LedgerEvent::Trial { .. }))
        .map(|r| r.cycle)
        .max();
    let mut last_cycle = Vec::new();
    if let Some(lc) = last {
        for r in inp.records.iter().filter(|r| r.cycle == lc) {
            if let LedgerEvent::Trial {
                candidate_id,
                descriptor_hash,
                record,
                improved,
                ..
            } = &r.event
            {
                let mut record = record.clone();
                if !inp.share_learning_curves {
                    record.curve = None;
                }
                last_cycle.push(CycleOutcome {
                    cycle: lc,
                    candidate_id: candidate_id.clone(),
                    descriptor_hash: descriptor_hash.clone(),
                    improved: *improved,
                    record,
                });
            }
        }
    }

    ControllerSummary {
        schema_version: SCHEMA_VERSION,
        cycle: st.next_cycle(),
        dataset: inp.dataset.clone(),
        protocol: inp.protocol.clone(),
        budget: BudgetInfo {
            total: st.budget,
            used,
            remaining: st.budget.saturating_sub(used),
        },
        initial_descriptor_hash: initial_hash,
        experts,
        last_cycle,
        fused: st.latest_fused().map(|f| FusedBlock {
            val_accuracy: f.val_accuracy,
            val_macro_f1: f.val_macro_f1,
        }),
        descriptors,
    }
}

// ---------------------------------------------------------------------------
// Firewall

/// Every object key that may appear in controller-bound JSON.
pub const WHITELIST: &[&str] = &[
    // summary
    "schema_version",
    "cycle",
    "dataset",
    "protocol",
    "budget",
    "initial_descriptor_hash",
    "experts",
    "last_cycle",
    "fused",
    "descriptors",
    "modalities",
    "classes",
    "series_len",
    "dims",
    "split_sizes",
    "train",
    "validation",
    "test",
    "class_prevalence",
    "total",
    "used",
    "remaining",
    "target",
    "best_f1",
    "best_descriptor_hash",
    "degenerate",
    "trials",
    "tried",
    "candidate_id",
    "descriptor_hash",
    "improved",
    "record",
    "modality",
    "class",
    "val_accuracy",
    "val_macro_f1",
    // protocol hyperparameters
    "adam",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "batch_size",
    "max_epochs",
    "patience",
    "loss",
    "seed",
    // trial records
    "status",
    "metrics",
    "curve",
    "runtime_seconds",
    "failure",
    "f1",
    "auc",
    "balanced_accuracy",
    "tp",
    "fp",
    "tn",
    "fn",
    "prevalence",
    "epochs_run",
    "train_loss_first",
    "train_loss_last",
    "val_loss_min",
    "val_f1_best",
    "kind",
    "message",
    // descriptor documents
    "preprocessing",
    "steps",
    "factor",
    "sigma",
    "stem",
    "blocks",
    "head",
    "output",
    "channels",
    "kernel",
    "stride",
    "dilation",
    "activation",
    "norm",
    "residual",
    "dropout",
    "pooling",
    "branch_kernels",
    "bottleneck_channels",
    "out_channels_per_branch",
    // directives
    "targets",
    "descriptor_path",
    "preprocessing_path",
    "rationale",
];

fn is_hash(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

fn walk(v: &Value, path: &str, map_of_hashes: bool, errs: &mut Vec<Rejection>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let p = crate::validation::join(path, k);
                let ok = if map_of_hashes {
                    is_hash(k)
                } else {
                    WHITELIST.contains(&k.as_str())
                };
                if !ok {
                    errs.push(Rejection::new(p.clone(), "field not on the controller whitelist"));
                    continue;
                }
                walk(child, &p, !map_of_hashes && k == "descriptors", errs);
            }
        }
        Value::Array(a) => {
            for (i, child) in a.iter().enumerate() {
                walk(child, &format!("{path}[{i}]"), false, errs);
            }
        }
        _ => {}
    }
}

/// Schema check: every key of `v` is whitelisted.
pub fn check_firewall(v: &Value) -> Result<(), Rejections> {
    let mut errs = Vec::new();
    walk(v, "", false, &mut errs);
    if errs.is_empty() {
        Ok(())
    } else {
        Err(Rejections(errs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn foreign_keys_are_rejected() {
        assert!(check_firewall(&json!({"experts": [{"target": {"modality": 0, "class": 1}}]})).is_ok());
        let e = check_firewall(&json!({"experts": [{"samples": [1.0]}]})).unwrap_err();
        assert!(e.mentions("experts[0].samples"));
        let e = check_firewall(&json!({"descriptors": {"not-a-hash": {}}})).unwrap_err();
        assert!(e.mentions("descriptors.not-a-hash"));
    }
}
