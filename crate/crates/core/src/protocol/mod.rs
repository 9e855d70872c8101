mod directive;
mod io;
mod ledger;
mod manifest;
mod results;
mod schema;
mod summary;

pub use directive::{parse_directive, valid_candidate_id, Directive, DirectiveContext};
pub use io::{append_sync, atomic_write, is_injected_crash, Storage, CRASH_MESSAGE};
pub use ledger::{
    committed_len, parse_record, read_ledger, replay, scan, BestEntry, Clock, Configuration, FusedPoint, Ledger,
    LedgerError, LedgerEvent, LedgerRecord, LedgerScan, RepairNote, ReportRow, RunStatus, SearchState,
    IMPROVEMENT_MARGIN,
};
pub use manifest::{render_manifest, RECENT_CYCLES};
pub use results::{parse_results, FusedBlock, ResultsFile, TargetRecord};
pub use schema::{decode, to_canonical, SCHEMA_VERSION};
pub use summary::{
    check_firewall, summarize_for_controller, BudgetInfo, ControllerSummary, CycleOutcome, DatasetMeta, ExpertSummary,
    SplitSizes, SummaryInputs, WHITELIST,
};
