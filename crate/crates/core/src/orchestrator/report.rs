//! Reports derived from the ledger alone.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::Serialize;

use crate::experts::ExpertKey;
use crate::protocol::{
    to_canonical, LedgerEvent, LedgerRecord, ReportRow, RunStatus, IMPROVEMENT_MARGIN, SCHEMA_VERSION,
};

pub const REPORT_JSON: &str = "report.json";
pub const TABLE_CSV: &str = "report_table.csv";
pub const TRAJECTORIES_CSV: &str = "trajectories.csv";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReportError {
    #[error("ledger is empty")]
    EmptyLedger,
    #[error("the run has no final evaluation yet")]
    NotEvaluated,
}

fn final_record(records: &[LedgerRecord]) -> Result<(RunStatus, usize, &[ReportRow]), ReportError> {
    if records.is_empty() {
        return Err(ReportError::EmptyLedger);
    }
    records
        .iter()
        .rev()
        .find_map(|r| match &r.event {
            LedgerEvent::FinalEvaluation {
                status,
                test_size,
                rows,
            } => Some((*status, *test_size, rows.as_slice())),
            _ => None,
        })
        .ok_or(ReportError::NotEvaluated)
}

/// `configuration,accuracy,macro_f1,runtime_seconds`, one row per
/// evaluated configuration.
pub fn table_csv(records: &[LedgerRecord]) -> Result<String, ReportError> {
    let (_, _, rows) = final_record(records)?;
    let mut out = String::from("configuration,accuracy,macro_f1,runtime_seconds\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.configuration.as_str(),
            r.accuracy,
            r.macro_f1,
            r.runtime_seconds
        );
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub key: ExpertKey,
    pub cycle: u64,
    pub trained_f1: Option<f64>,
    pub best_so_far_f1: Option<f64>,
}

/// One row per trial: the F1 of the expert trained in that cycle and the
/// best F1 so far, grouped by expert.
pub fn trajectories(records: &[LedgerRecord]) -> Vec<TrajectoryRow> {
    let mut best: BTreeMap<ExpertKey, f64> = BTreeMap::new();
    let mut rows = Vec::new();
    for r in records {
        if let LedgerEvent::Trial { record, .. } = &r.event {
            let f1 = record.f1().filter(|_| record.status == crate::experts::TrialStatus::Ok);
            if let Some(f) = f1 {
                let b = best.entry(record.target).or_insert(f);
                if f > *b + IMPROVEMENT_MARGIN {
                    *b = f;
                }
            }
            rows.push(TrajectoryRow {
                key: record.target,
                cycle: r.cycle,
                trained_f1: f1,
                best_so_far_f1: best.get(&record.target).copied(),
            });
        }
    }
    rows.sort_by_key(|r| (r.key, r.cycle));
    rows
}

pub fn trajectories_csv(records: &[LedgerRecord]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut out = String::from("modality,class,cycle,trained_f1,best_so_far_f1\n");
    for r in trajectories(records) {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.key.modality,
            r.key.class,
            r.cycle,
            opt(r.trained_f1),
            opt(r.best_so_far_f1)
        );
    }
    out
}

#[derive(Serialize)]
struct Report<'a> {
    schema_version: u64,
    status: RunStatus,
    cycles: u64,
    test_size: usize,
    rows: &'a [ReportRow],
}

pub fn report_json(records: &[LedgerRecord]) -> Result<String, ReportError> {
    let (status, test_size, rows) = final_record(records)?;
    let cycles = records
        .iter()
        .filter(|r| r.cycle > 0 && matches!(r.event, LedgerEvent::CycleEnd {}))
        .count() as u64;
    Ok(to_canonical(&Report {
        schema_version: SCHEMA_VERSION,
        status,
        cycles,
        test_size,
        rows,
    }))
}
