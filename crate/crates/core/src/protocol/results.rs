use serde::{Deserialize, Serialize};

use super::schema::{check_unit, check_version, decode, finish, to_canonical};
use crate::experts::{ExpertKey, LearningCurveSummary, RedactedFailure, TrialStatus};
use crate::metrics::BinaryMetrics;
use crate::validation::{Rejection, Rejections};

/// Outcome for one directive target. Every field is on the firewall
/// whitelist: metrics, curve summary, runtime and a redacted failure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetRecord {
    pub target: ExpertKey,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<BinaryMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<LearningCurveSummary>,
    pub runtime_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<RedactedFailure>,
}

impl TargetRecord {
    pub fn f1(&self) -> Option<f64> {
        self.metrics.as_ref().map(|m| m.f1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusedBlock {
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultsFile {
    pub schema_version: u64,
    pub cycle: u64,
    pub candidate_id: String,
    pub records: Vec<TargetRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused: Option<FusedBlock>,
}

impl ResultsFile {
    pub fn to_text(&self) -> String {
        to_canonical(self)
    }
}

pub(crate) fn check_record(errs: &mut Vec<Rejection>, path: &str, r: &TargetRecord) {
    if let Some(m) = &r.metrics {
        for (name, v) in [
            ("f1", m.f1),
            ("balanced_accuracy", m.balanced_accuracy),
            ("prevalence", m.prevalence),
        ] {
            check_unit(errs, format!("{path}.metrics.{name}"), v);
        }
        if let Some(a) = m.auc {
            check_unit(errs, format!("{path}.metrics.auc"), a);
        }
        let denom = 2 * m.tp + m.fp + m.fn_;
        let f1 = if denom == 0 {
            0.0
        } else {
            2.0 * m.tp as f64 / denom as f64
        };
        if (f1 - m.f1).abs() > 1e-12 {
            errs.push(Rejection::new(
                format!("{path}.metrics.f1"),
                "f1 inconsistent with counts",
            ));
        }
    }
    match r.status {
        TrialStatus::Ok => {
            if r.metrics.is_none() {
                errs.push(Rejection::new(format!("{path}.metrics"), "required when status is ok"));
            }
            if r.curve.is_none() {
                errs.push(Rejection::new(format!("{path}.curve"), "required when status is ok"));
            }
        }
        TrialStatus::Failed => {
            if r.failure.is_none() {
                errs.push(Rejection::new(
                    format!("{path}.failure"),
                    "required when status is failed",
                ));
            }
        }
        TrialStatus::SkippedDegenerate => {}
    }
    if !(r.runtime_seconds >= 0.0) {
        errs.push(Rejection::new(format!("{path}.runtime_seconds"), "must be nonnegative"));
    }
}

pub fn parse_results(bytes: &[u8]) -> Result<ResultsFile, Rejections> {
    let r: ResultsFile = decode(bytes)?;
    let mut errs = Vec::new();
    check_version(&mut errs, r.schema_version);
    if r.records.is_empty() {
        errs.push(Rejection::new("records", "at least one record"));
    }
    for (i, rec) in r.records.iter().enumerate() {
        check_record(&mut errs, &format!("records[{i}]"), rec);
    }
    if let Some(f) = &r.fused {
        check_unit(&mut errs, "fused.val_accuracy", f.val_accuracy);
        check_unit(&mut errs, "fused.val_macro_f1", f.val_macro_f1);
    }
    finish(r, errs)
}
