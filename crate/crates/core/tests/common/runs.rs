//! Run configurations and harnesses over whole run directories.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use expert_nas::data::{apply_splits, generate_synthetic, Difficulty, Split, SyntheticSpec, DEFAULT_FRACTIONS};
use expert_nas::nn::TrainProtocol;
use expert_nas::orchestrator::{
    run_search, DatasetSource, InitialDescriptor, RunConfig, RunError, RunOptions, LEDGER_FILE,
};
use expert_nas::protocol::{read_ledger, replay, LedgerEvent, LedgerRecord, RunStatus, Storage};

pub const SENTINEL: f64 = 424_242.125;

pub fn spec(seed: u64, samples: usize, t: usize, difficulty: Difficulty) -> SyntheticSpec {
    SyntheticSpec {
        seed,
        samples,
        modalities: 2,
        classes: 3,
        series_len: t,
        dims_per_modality: 2,
        difficulty,
    }
}

/// Pinned separable fixture for the staged-baseline criterion. Eight
/// epochs suffice on this data and keep the run inside its time bound.
pub fn separable_config() -> RunConfig {
    let mut c = RunConfig::synthetic(spec(7, 500, 64, Difficulty::Separable), 0, 7);
    c.protocol = TrainProtocol {
        max_epochs: 8,
        patience: 3,
        ..TrainProtocol::default()
    };
    c
}

/// Pinned hard fixture with the crippled dense-only start.
pub fn hard_config() -> RunConfig {
    let mut c = RunConfig::synthetic(spec(7, 300, 128, Difficulty::Hard), 10, 7);
    c.initial_descriptor = InitialDescriptor::DenseOnly;
    c
}

/// A few seconds per run: small data, dense-only start, short training.
pub fn tiny_config(budget: u64, seed: u64) -> RunConfig {
    let mut s = spec(seed, 60, 16, Difficulty::Hard);
    s.dims_per_modality = 1;
    let mut c = RunConfig::synthetic(s, budget, seed);
    c.initial_descriptor = InitialDescriptor::DenseOnly;
    c.protocol = TrainProtocol {
        max_epochs: 3,
        patience: 2,
        batch_size: 16,
        ..TrainProtocol::default()
    };
    c
}

pub fn run(dir: &Path, config: &RunConfig) -> Result<RunStatus, RunError> {
    run_search(dir, config, RunOptions::default())
}

pub fn ledger(dir: &Path) -> Vec<LedgerRecord> {
    read_ledger(&dir.join(LEDGER_FILE)).expect("ledger reads")
}

pub fn ledger_bytes(dir: &Path) -> Vec<u8> {
    std::fs::read(dir.join(LEDGER_FILE)).expect("ledger exists")
}

pub fn count_kind(records: &[LedgerRecord], kind: &str) -> usize {
    records.iter().filter(|r| r.event.kind() == kind).count()
}

/// Every regular file under `dir` (relative path → bytes), excluding the
/// lock file.
pub fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.file_name().is_some_and(|n| n != expert_nas::orchestrator::LOCK_FILE) {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Test accuracy of one configuration from the final evaluation.
pub fn accuracy(records: &[LedgerRecord], configuration: &str) -> Option<f64> {
    records.iter().rev().find_map(|r| match &r.event {
        LedgerEvent::FinalEvaluation { rows, .. } => rows
            .iter()
            .find(|row| row.configuration.as_str() == configuration)
            .map(|row| row.accuracy),
        _ => None,
    })
}

/// Per expert: `(cycle, trained_f1, best_so_far)` in ledger order.
pub fn traces(records: &[LedgerRecord]) -> BTreeMap<String, Vec<(u64, f64, f64)>> {
    let mut out: BTreeMap<String, Vec<(u64, f64, f64)>> = BTreeMap::new();
    for r in records {
        if let LedgerEvent::Trial { record, .. } = &r.event {
            let key = record.target.file_stem();
            let f1 = record.f1().unwrap_or(0.0);
            let trace = out.entry(key).or_default();
            let best = trace.last().map_or(f1, |&(_, _, b)| b.max(f1));
            trace.push((r.cycle, f1, best));
        }
    }
    out
}

/// Writes a bundle whose every modality, in every split, contains the
/// sentinel value, and returns a config reading it.
pub fn sentinel_config(dir: &Path, budget: u64, seed: u64) -> RunConfig {
    let base = tiny_config(budget, seed);
    let DatasetSource::Synthetic { spec } = &base.dataset else {
        unreachable!()
    };
    let mut bundle = apply_splits(generate_synthetic(spec).unwrap(), DEFAULT_FRACTIONS, seed).unwrap();
    let splits = bundle.splits.clone().unwrap();
    let (t, d) = (bundle.series_len, bundle.variates);
    for split in [Split::Train, Split::Validation, Split::Test] {
        let rows = splits.rows(split).to_vec();
        for (k, &row) in rows.iter().take(2).enumerate() {
            for v in 0..d {
                let ti = (k * 5 + v) % t;
                bundle.values[(row * t + ti) * d + v] = SENTINEL;
            }
        }
    }
    std::fs::create_dir_all(dir).unwrap();
    let path = dir.join("sentinel_bundle.json");
    std::fs::write(&path, bundle.to_json()).unwrap();
    let mut c = base;
    c.dataset = DatasetSource::Bundle { path };
    c
}

/// Runs with a tap on everything sent to the controller; returns the
/// captured bytes.
pub fn tapped_run(dir: &Path, config: &RunConfig) -> Result<(RunStatus, Vec<u8>), RunError> {
    let tap = Arc::new(Mutex::new(Vec::new()));
    let status = run_search(
        dir,
        config,
        RunOptions {
            tap: Some(tap.clone()),
            ..RunOptions::default()
        },
    )?;
    let bytes = tap.lock().unwrap().clone();
    Ok((status, bytes))
}

pub fn contains_sentinel(bytes: &[u8]) -> bool {
    let text = String::from_utf8_lossy(bytes);
    ["424242.125", "424242", "4.24242125e5", "4.2424"]
        .iter()
        .any(|s| text.contains(s))
}

pub struct CrashReport {
    pub crash_points: usize,
    pub mismatches: Vec<String>,
}

/// Crashes a run at every storage write in turn, resumes it with replay
/// verification, and compares the final ledger with an uninterrupted run.
pub fn crash_every_write(root: &Path, config: &RunConfig) -> CrashReport {
    let clean_dir = root.join("clean");
    let storage = Storage::new();
    run_search(
        &clean_dir,
        config,
        RunOptions {
            storage: storage.clone(),
            verify_replay: true,
            ..RunOptions::default()
        },
    )
    .expect("uninterrupted run");
    let golden = ledger_bytes(&clean_dir);
    let writes = storage.writes();
    let mut mismatches = Vec::new();
    for n in 1..=writes {
        let dir = root.join(format!("crash{n}"));
        let crashed = run_search(
            &dir,
            config,
            RunOptions {
                storage: Storage::crash_at(n),
                ..RunOptions::default()
            },
        );
        if crashed.is_ok() {
            mismatches.push(format!("write {n}: run finished despite the injected crash"));
            continue;
        }
        let resumed = run_search(
            &dir,
            config,
            RunOptions {
                verify_replay: true,
                ..RunOptions::default()
            },
        );
        match resumed {
            Err(e) => mismatches.push(format!("write {n}: resume failed: {e}")),
            Ok(_) if ledger_bytes(&dir) != golden => mismatches.push(format!("write {n}: ledger differs")),
            Ok(_) => {
                let records = ledger(&dir);
                if replay(&records).records != records.len() as u64 {
                    mismatches.push(format!("write {n}: replay count differs"));
                }
            }
        }
        let _ = std::fs::remove_dir_all(&dir);
    }
    CrashReport {
        crash_points: writes,
        mismatches,
    }
}

/// Separable data the stock baseline classifies perfectly on validation.
pub fn skip_config() -> RunConfig {
    let mut s = spec(3, 90, 32, Difficulty::Separable);
    s.dims_per_modality = 1;
    let mut c = RunConfig::synthetic(s, 5, 3);
    c.protocol = TrainProtocol {
        max_epochs: 6,
        patience: 3,
        batch_size: 16,
        adam: expert_nas::nn::AdamConfig {
            lr: 0.01,
            ..Default::default()
        },
        ..TrainProtocol::default()
    };
    c
}
