//! Append-only JSONL audit ledger and the search state it replays to.
//!
//! One canonical JSON record per line: `{"cycle":..,"event":{"kind":..},
//! "seq":..,"time":..}`. Sequence numbers start at 0 and are contiguous.
//! A trailing line that does not parse (torn write) is dropped with a
//! warning; a bad line anywhere else is an error.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::Storage;
use super::results::TargetRecord;
use super::schema::{decode, to_canonical};
use crate::experts::{ExpertKey, RedactedFailure, TrialStatus};
use crate::validation::{Rejection, Rejections};

/// Minimum F1 gain that counts as an improvement.
pub const IMPROVEMENT_MARGIN: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Skipped,
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Running => "running",
            RunStatus::Completed => "completed",
            RunStatus::Skipped => "skipped",
            RunStatus::Failed => "failed",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Running | RunStatus::Completed => 0,
            RunStatus::Skipped => 2,
            RunStatus::Failed => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Configuration {
    EndToEnd,
    Staged,
    Nas,
}

impl Configuration {
    pub fn as_str(self) -> &'static str {
        match self {
            Configuration::EndToEnd => "end_to_end",
            Configuration::Staged => "staged",
            Configuration::Nas => "nas",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRow {
    pub configuration: Configuration,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub runtime_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepairNote {
    pub attempt: u32,
    pub rejections: Vec<Rejection>,
}

/// Declares [`LedgerEvent`] (internally tagged by `kind`) together with an
/// externally tagged twin used only to locate decode errors: serde loses
/// field paths inside internally tagged enums.
macro_rules! ledger_events {
    ($($(#[$vm:meta])* $variant:ident { $($(#[$fm:meta])* $field:ident : $ty:ty),* $(,)? }),* $(,)?) => {
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        #[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
        pub enum LedgerEvent {
            $($(#[$vm])* $variant { $($(#[$fm])* $field: $ty),* }),*
        }

        #[derive(Deserialize)]
        #[serde(rename_all = "snake_case", deny_unknown_fields)]
        #[allow(dead_code)]
        enum EventProbe {
            $($variant { $($(#[$fm])* $field: $ty),* }),*
        }
    };
}

ledger_events! {
    RunStarted {
        config_hash: String,
        master_seed: u64,
        budget: u64,
        modalities: usize,
        classes: usize,
        initial_descriptor_hash: String,
    },
    Proposal {
        candidate_id: String,
        targets: Vec<ExpertKey>,
        descriptor_hash: String,
        controller: String,
        rationale: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        operator: Option<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        repairs: Vec<RepairNote>,
    },
    Trial {
        candidate_id: String,
        controller: String,
        descriptor_hash: String,
        record: TargetRecord,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        results_digest: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        checkpoint: Option<String>,
        improved: bool,
    },
    Fusion {
        candidate_id: String,
        status: TrialStatus,
        runtime_seconds: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        val_accuracy: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        val_macro_f1: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        checkpoint: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        failure: Option<RedactedFailure>,
    },
    EndToEnd {
        status: TrialStatus,
        runtime_seconds: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        val_accuracy: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        val_macro_f1: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        checkpoint: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        failure: Option<RedactedFailure>,
    },
    /// Commit marker: every record of the cycle has been written.
    CycleEnd {},
    Skipped {
        val_accuracy: f64,
    },
    FinalEvaluation {
        status: RunStatus,
        test_size: usize,
        rows: Vec<ReportRow>,
    },
}

impl LedgerEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            LedgerEvent::RunStarted { .. } => "run_started",
            LedgerEvent::Proposal { .. } => "proposal",
            LedgerEvent::Trial { .. } => "trial",
            LedgerEvent::Fusion { .. } => "fusion",
            LedgerEvent::EndToEnd { .. } => "end_to_end",
            LedgerEvent::CycleEnd {} => "cycle_end",
            LedgerEvent::Skipped { .. } => "skipped",
            LedgerEvent::FinalEvaluation { .. } => "final_evaluation",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerRecord {
    pub seq: u64,
    /// Logical tick (equal to `seq`) or Unix seconds, per the run clock.
    pub time: u64,
    pub cycle: u64,
    pub event: LedgerEvent,
}

impl LedgerRecord {
    pub fn to_line(&self) -> String {
        to_canonical(self)
    }
}

pub fn parse_record(line: &[u8]) -> Result<LedgerRecord, Rejections> {
    decode(line).map_err(|e| locate_event_error(line).unwrap_or(e))
}

/// Re-decodes the event as `{kind: fields}` so the rejection names the
/// field inside the event.
fn locate_event_error(line: &[u8]) -> Option<Rejections> {
    let mut v: serde_json::Value = serde_json::from_slice(line).ok()?;
    let event = v.get_mut("event")?.as_object_mut()?;
    let kind = match event.remove("kind") {
        Some(serde_json::Value::String(k)) => k,
        Some(_) => return Some(Rejections::single("event.kind", "must be a string")),
        None => return Some(Rejections::single("event.kind", crate::validation::RULE_MISSING)),
    };
    let probe = serde_json::json!({ kind.clone(): event.clone() });
    let err = decode::<EventProbe>(probe.to_string().as_bytes()).err()?;
    Some(Rejections(
        err.0
            .into_iter()
            .map(|r| {
                let path = if r.rule.starts_with("unknown variant") {
                    "event.kind".to_string()
                } else {
                    format!("event{}", r.path.strip_prefix(kind.as_str()).unwrap_or(&r.path))
                };
                Rejection::new(path, r.rule)
            })
            .collect(),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    /// `time = seq`; required for byte-identical ledgers.
    #[default]
    Logical,
    Wall,
}

impl Clock {
    pub fn now(self, seq: u64) -> u64 {
        match self {
            Clock::Logical => seq,
            Clock::Wall => std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("ledger line {line}: {rejections}")]
    Corrupt { line: usize, rejections: Rejections },
    #[error("ledger line {line}: sequence number {found}, expected {expected}")]
    Sequence { line: usize, found: u64, expected: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parsed ledger plus the number of bytes belonging to valid records.
pub struct LedgerScan {
    pub records: Vec<LedgerRecord>,
    pub valid_len: usize,
    pub dropped_tail: bool,
}

pub fn scan(bytes: &[u8]) -> Result<LedgerScan, LedgerError> {
    let mut records = Vec::new();
    let mut pos = 0;
    let mut line_no = 0;
    while pos < bytes.len() {
        line_no += 1;
        let end = bytes[pos..].iter().position(|&b| b == b'\n').map(|i| pos + i);
        let (line, next) = match end {
            Some(e) => (&bytes[pos..e], e + 1),
            None => (&bytes[pos..], bytes.len()),
        };
        let is_last = next >= bytes.len();
        let parsed = if end.is_none() {
            Err(Rejections::single("$", "unterminated line"))
        } else {
            parse_record(line)
        };
        match parsed {
            Ok(r) => {
                if r.seq != records.len() as u64 {
                    return Err(LedgerError::Sequence {
                        line: line_no,
                        found: r.seq,
                        expected: records.len() as u64,
                    });
                }
                records.push(r);
                pos = next;
            }
            Err(rejections) if is_last => {
                log::warn!("ledger line {line_no} is incomplete ({rejections}); dropping it");
                return Ok(LedgerScan {
                    records,
                    valid_len: pos,
                    dropped_tail: true,
                });
            }
            Err(rejections) => {
                return Err(LedgerError::Corrupt {
                    line: line_no,
                    rejections,
                })
            }
        }
    }
    Ok(LedgerScan {
        records,
        valid_len: pos,
        dropped_tail: false,
    })
}

/// Reads a ledger file, truncating a torn trailing record in place.
pub fn read_ledger(path: &Path) -> Result<Vec<LedgerRecord>, LedgerError> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let s = scan(&bytes)?;
    if s.dropped_tail {
        super::io::atomic_write(path, &bytes[..s.valid_len])?;
    }
    Ok(s.records)
}

/// Records after the last commit marker belong to an interrupted cycle.
pub fn committed_len(records: &[LedgerRecord]) -> usize {
    records
        .iter()
        .rposition(|r| {
            matches!(
                r.event,
                LedgerEvent::RunStarted { .. }
                    | LedgerEvent::CycleEnd {}
                    | LedgerEvent::Skipped { .. }
                    | LedgerEvent::FinalEvaluation { .. }
            )
        })
        .map_or(0, |i| i + 1)
}

/// Appender that can re-execute an interrupted suffix: records that already
/// exist with identical content are skipped instead of duplicated.
pub struct Ledger {
    path: PathBuf,
    storage: Storage,
    clock: Clock,
    records: Vec<LedgerRecord>,
    cursor: usize,
}

impl Ledger {
    /// Opens for appending after the committed prefix.
    pub fn open(path: &Path, storage: Storage, clock: Clock) -> Result<Self, LedgerError> {
        let records = read_ledger(path)?;
        let cursor = committed_len(&records);
        Ok(Self {
            path: path.to_path_buf(),
            storage,
            clock,
            records,
            cursor,
        })
    }

    pub fn records(&self) -> &[LedgerRecord] {
        &self.records[..self.cursor]
    }

    pub fn all_records(&self) -> &[LedgerRecord] {
        &self.records
    }

    pub fn next_seq(&self) -> u64 {
        self.cursor as u64
    }

    pub fn append(&mut self, cycle: u64, event: LedgerEvent) -> std::io::Result<&LedgerRecord> {
        let seq = self.cursor as u64;
        if let Some(existing) = self.records.get(self.cursor) {
            if existing.cycle == cycle && existing.event == event {
                self.cursor += 1;
                return Ok(&self.records[self.cursor - 1]);
            }
            log::warn!("ledger record {seq} differs on re-execution; discarding the interrupted suffix");
            let mut prefix = String::new();
            for r in &self.records[..self.cursor] {
                prefix.push_str(&r.to_line());
            }
            self.storage.write(&self.path, prefix.as_bytes())?;
            self.records.truncate(self.cursor);
        }
        let rec = LedgerRecord {
            seq,
            time: self.clock.now(seq),
            cycle,
            event,
        };
        self.storage.append(&self.path, rec.to_line().as_bytes())?;
        self.records.push(rec);
        self.cursor += 1;
        Ok(&self.records[self.cursor - 1])
    }
}

// ---------------------------------------------------------------------------
// Replay

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestEntry {
    pub f1: f64,
    pub descriptor_hash: String,
    pub candidate_id: String,
    pub cycle: u64,
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedPoint {
    pub cycle: u64,
    pub candidate_id: String,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchState {
    pub config_hash: Option<String>,
    pub budget: u64,
    pub modalities: usize,
    pub classes: usize,
    pub best: BTreeMap<ExpertKey, BestEntry>,
    pub degenerate: BTreeSet<ExpertKey>,
    /// Cycle trials per expert (baseline excluded).
    pub cycle_trials: BTreeMap<ExpertKey, u64>,
    pub baseline_done: bool,
    pub cycles_completed: u64,
    pub fused: Vec<FusedPoint>,
    pub end_to_end: Option<(f64, f64)>,
    pub status: RunStatus,
    pub records: u64,
    pub final_rows: Option<Vec<ReportRow>>,
}

impl Default for SearchState {
    fn default() -> Self {
        Self {
            config_hash: None,
            budget: 0,
            modalities: 0,
            classes: 0,
            best: BTreeMap::new(),
            degenerate: BTreeSet::new(),
            cycle_trials: BTreeMap::new(),
            baseline_done: false,
            cycles_completed: 0,
            fused: Vec::new(),
            end_to_end: None,
            status: RunStatus::Running,
            records: 0,
            final_rows: None,
        }
    }
}

impl SearchState {
    /// Cycle index that runs next (0 = baseline).
    pub fn next_cycle(&self) -> u64 {
        if self.baseline_done {
            self.cycles_completed + 1
        } else {
            0
        }
    }

    /// Strict-improvement rule for best-so-far updates.
    pub fn improves(&self, key: ExpertKey, record: &TargetRecord) -> bool {
        if record.status != TrialStatus::Ok {
            return false;
        }
        let Some(f1) = record.f1() else { return false };
        match self.best.get(&key) {
            None => true,
            Some(b) => f1 > b.f1 + IMPROVEMENT_MARGIN,
        }
    }

    pub fn latest_fused(&self) -> Option<&FusedPoint> {
        self.fused.last()
    }

    pub fn apply(&mut self, rec: &LedgerRecord) {
        self.records += 1;
        match &rec.event {
            LedgerEvent::RunStarted {
                config_hash,
                budget,
                modalities,
                classes,
                ..
            } => {
                self.config_hash = Some(config_hash.clone());
                self.budget = *budget;
                self.modalities = *modalities;
                self.classes = *classes;
            }
            LedgerEvent::Proposal { .. } => {}
            LedgerEvent::Trial {
                candidate_id,
                descriptor_hash,
                record,
                checkpoint,
                ..
            } => {
                let key = record.target;
                if rec.cycle == 0 && record.status == TrialStatus::SkippedDegenerate {
                    self.degenerate.insert(key);
                }
                if rec.cycle > 0 {
                    *self.cycle_trials.entry(key).or_default() += 1;
                }
                if self.improves(key, record) {
                    self.best.insert(
                        key,
                        BestEntry {
                            f1: record.f1().unwrap_or(0.0),
                            descriptor_hash: descriptor_hash.clone(),
                            candidate_id: candidate_id.clone(),
                            cycle: rec.cycle,
                            checkpoint: checkpoint.clone(),
                        },
                    );
                }
            }
            LedgerEvent::Fusion {
                candidate_id,
                status,
                val_accuracy,
                val_macro_f1,
                checkpoint,
                ..
            } => {
                if let (TrialStatus::Ok, Some(a), Some(f)) = (status, val_accuracy, val_macro_f1) {
                    self.fused.push(FusedPoint {
                        cycle: rec.cycle,
                        candidate_id: candidate_id.clone(),
                        val_accuracy: *a,
                        val_macro_f1: *f,
                        checkpoint: checkpoint.clone(),
                    });
                }
            }
            LedgerEvent::EndToEnd {
                val_accuracy,
                val_macro_f1,
                ..
            } => {
                if let (Some(a), Some(f)) = (val_accuracy, val_macro_f1) {
                    self.end_to_end = Some((*a, *f));
                }
            }
            LedgerEvent::CycleEnd {} => {
                if rec.cycle == 0 {
                    self.baseline_done = true;
                } else {
                    self.cycles_completed = rec.cycle;
                }
            }
            LedgerEvent::Skipped { .. } => self.status = RunStatus::Skipped,
            LedgerEvent::FinalEvaluation { status, rows, .. } => {
                self.status = *status;
                self.final_rows = Some(rows.clone());
            }
        }
    }
}

pub fn replay(records: &[LedgerRecord]) -> SearchState {
    let mut s = SearchState::default();
    for r in records {
        s.apply(r);
    }
    s
}
