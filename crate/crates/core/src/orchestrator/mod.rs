//! The research loop and its run directory.
//!
//! ```text
//! <run-dir>/
//!   config.json          effective configuration (hash pinned in ledger record 0)
//!   ledger.jsonl         append-only audit log
//!   directive.json       latest directive
//!   results.json         latest results
//!   manifest.md          human-readable view of the ledger
//!   models/<candidate>/  model.json, preprocessing.json, experts/*.ckpt, fusion.ckpt
//!   report.json, report_table.csv, trajectories.csv
//! ```

mod config;
mod lock;
pub mod report;
mod run;

pub use config::{
    ControllerConfig, DatasetSource, FaultConfig, InitialDescriptor, Overrides, RunConfig, ENV_BUDGET, ENV_ENDPOINT,
    ENV_SEED, ENV_WORKERS,
};
pub use lock::{LockError, RunLock, LOCK_FILE};
pub use run::{
    init_run, is_initialized, make_controller, resume, run_search, ControllerTap, Executor, RunError, RunOptions,
    BASELINE_ID, CONFIG_FILE, DIRECTIVE_FILE, FINAL_ID, LEDGER_FILE, MANIFEST_FILE, MODELS_DIR, RESULTS_FILE,
};
