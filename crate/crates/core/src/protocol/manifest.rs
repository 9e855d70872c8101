//! Human-readable view of the ledger. Regenerated after every cycle and
//! never parsed back.

use std::fmt::Write;

use super::ledger::{replay, LedgerEvent, LedgerRecord};
use crate::experts::expert_grid;

/// Number of cycles listed under Recent Findings.
pub const RECENT_CYCLES: usize = 5;

pub fn render_manifest(records: &[LedgerRecord]) -> String {
    let state = replay(records);
    let mut out = String::from("# Search manifest\n\n");
    let _ = writeln!(
        out,
        "Cycles completed: {} of {}. Next cycle: {}. Status: {:?}.\n",
        state.cycles_completed,
        state.budget,
        state.next_cycle(),
        state.status
    );

    out.push_str("## Current Best Table\n\n");
    out.push_str("| expert | best F1 | descriptor | candidate | cycle |\n");
    out.push_str("|---|---|---|---|---|\n");
    for key in expert_grid(state.modalities, state.classes) {
        match state.best.get(&key) {
            Some(b) => {
                let short = &b.descriptor_hash[..b.descriptor_hash.len().min(12)];
                let _ = writeln!(
                    out,
                    "| {} | {:.4} | {short} | {} | {} |",
                    key.file_stem(),
                    b.f1,
                    b.candidate_id,
                    b.cycle
                );
            }
            None if state.degenerate.contains(&key) => {
                let _ = writeln!(out, "| {} | degenerate | - | - | - |", key.file_stem());
            }
            None => {
                let _ = writeln!(out, "| {} | - | - | - | - |", key.file_stem());
            }
        }
    }
    if let Some(f) = state.latest_fused() {
        let _ = writeln!(
            out,
            "\nFused validation: accuracy {:.4}, macro-F1 {:.4} (cycle {}).",
            f.val_accuracy, f.val_macro_f1, f.cycle
        );
    }

    out.push_str("\n## Recent Findings\n\n");
    let last = state.cycles_completed as usize;
    let first = last.saturating_sub(RECENT_CYCLES - 1).max(1);
    for r in records
        .iter()
        .filter(|r| (first as u64..=last as u64).contains(&r.cycle))
    {
        if let LedgerEvent::Trial {
            candidate_id,
            record,
            improved,
            ..
        } = &r.event
        {
            let f1 = record.f1().map_or("-".to_string(), |v| format!("{v:.4}"));
            let verdict = if *improved { "improved best" } else { "no improvement" };
            let _ = writeln!(
                out,
                "- cycle {}: {} candidate {candidate_id}, status {:?}, F1 {f1}, {verdict}",
                r.cycle,
                record.target.file_stem(),
                record.status
            );
        }
    }

    out.push_str("\n## Rationale Log\n\n");
    for r in records {
        if let LedgerEvent::Proposal {
            candidate_id,
            controller,
            rationale,
            repairs,
            ..
        } = &r.event
        {
            let _ = write!(
                out,
                "- cycle {} [{controller}] {candidate_id}: {}",
                r.cycle,
                rationale.replace('\n', " ")
            );
            if !repairs.is_empty() {
                let _ = write!(out, " ({} repair attempts)", repairs.len());
            }
            out.push('\n');
        }
    }
    out
}
