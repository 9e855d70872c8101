mod common;

use std::path::Path;
use std::process::Command;

use common::runs::{self, count_kind, ledger, tiny_config, tree};
use expert_nas::controller::RemoteConfig;
use expert_nas::experts::TrialStatus;
use expert_nas::orchestrator::{run_search, ControllerConfig, RunError, RunOptions, CONFIG_FILE};
use expert_nas::protocol::{LedgerEvent, RunStatus};

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

fn trial_count(records: &[expert_nas::protocol::LedgerRecord]) -> usize {
    count_kind(records, "trial")
}

#[test]
fn a_budgeted_run_writes_one_proposal_per_cycle() {
    let dir = tmp();
    let status = runs::run(dir.path(), &tiny_config(3, 1)).unwrap();
    assert_eq!(status, RunStatus::Completed);
    let records = ledger(dir.path());
    assert_eq!(count_kind(&records, "run_started"), 1);
    assert_eq!(count_kind(&records, "proposal"), 3);
    assert_eq!(count_kind(&records, "cycle_end"), 4);
    let improving_cycles = records
        .iter()
        .filter(|r| r.cycle > 0 && matches!(r.event, LedgerEvent::Trial { improved: true, .. }))
        .map(|r| r.cycle)
        .collect::<std::collections::BTreeSet<_>>();
    assert_eq!(
        count_kind(&records, "fusion"),
        1 + improving_cycles.len(),
        "fusion reruns only after an improvement"
    );
    assert_eq!(count_kind(&records, "end_to_end"), 1);
    assert_eq!(count_kind(&records, "final_evaluation"), 1);
    assert!(trial_count(&records) >= 6 + 3);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r.seq, i as u64);
        assert_eq!(r.time, r.seq, "logical clock");
    }
}

#[test]
fn reports_agree_with_the_ledger() {
    let dir = tmp();
    runs::run(dir.path(), &tiny_config(4, 2)).unwrap();
    let records = ledger(dir.path());

    let table = std::fs::read_to_string(dir.path().join("report_table.csv")).unwrap();
    let configs: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(configs, ["end_to_end", "staged", "nas"]);

    let traj = std::fs::read_to_string(dir.path().join("trajectories.csv")).unwrap();
    let rows: Vec<Vec<f64>> = traj
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), trial_count(&records));
    for (expert, trace) in runs::traces(&records) {
        for w in trace.windows(2) {
            assert!(w[1].2 >= w[0].2, "{expert}: best-so-far decreased");
        }
    }
    for row in &rows {
        assert!(row[4] >= row[3] - 1e-15, "best-so-far below the trained F1");
    }
}

#[test]
fn budget_zero_trains_only_the_baseline() {
    let dir = tmp();
    runs::run(dir.path(), &tiny_config(0, 3)).unwrap();
    let records = ledger(dir.path());
    assert_eq!(count_kind(&records, "proposal"), 0);
    assert_eq!(count_kind(&records, "cycle_end"), 1);
    assert_eq!(count_kind(&records, "final_evaluation"), 1);
}

#[test]
fn a_perfect_baseline_skips_the_search() {
    let dir = tmp();
    let status = runs::run(dir.path(), &runs::skip_config()).unwrap();
    assert_eq!(status, RunStatus::Skipped);
    let records = ledger(dir.path());
    assert_eq!(count_kind(&records, "proposal"), 0);
    assert!(records
        .iter()
        .any(|r| matches!(r.event, LedgerEvent::Skipped { val_accuracy } if val_accuracy == 1.0)));
    assert!(records.iter().any(|r| matches!(
        &r.event,
        LedgerEvent::FinalEvaluation {
            status: RunStatus::Skipped,
            ..
        }
    )));
}

#[test]
fn resuming_a_finished_run_changes_nothing() {
    let dir = tmp();
    let config = tiny_config(2, 4);
    runs::run(dir.path(), &config).unwrap();
    let before = tree(dir.path());
    runs::run(dir.path(), &config).unwrap();
    assert_eq!(before, tree(dir.path()));
}

#[test]
fn a_different_config_cannot_reuse_a_run_directory() {
    let dir = tmp();
    runs::run(dir.path(), &tiny_config(1, 4)).unwrap();
    let err = runs::run(dir.path(), &tiny_config(2, 4)).unwrap_err();
    assert!(matches!(err, RunError::ConfigMismatch { .. }), "{err}");
}

#[test]
fn a_crash_at_any_write_resumes_to_the_uninterrupted_ledger() {
    let root = tmp();
    let report = runs::crash_every_write(root.path(), &tiny_config(2, 5));
    assert!(report.crash_points > 20, "only {} writes", report.crash_points);
    assert!(report.mismatches.is_empty(), "{:#?}", report.mismatches);
}

#[test]
fn identical_runs_are_byte_identical() {
    let (a, b) = (tmp(), tmp());
    let config = tiny_config(3, 6);
    runs::run(a.path(), &config).unwrap();
    run_search(
        b.path(),
        &config,
        RunOptions {
            workers: Some(2),
            ..RunOptions::default()
        },
    )
    .unwrap();
    assert_eq!(tree(a.path()), tree(b.path()));
}

#[test]
fn controller_bound_bytes_never_carry_data_values() {
    let dir = tmp();
    let mut config = runs::sentinel_config(dir.path(), 10, 4);
    config.fault_injection.cycles = vec![2, 5, 9];
    assert!(runs::contains_sentinel(
        &std::fs::read(dir.path().join("sentinel_bundle.json")).unwrap()
    ));
    let run_dir = dir.path().join("run");
    let (_, tapped) = runs::tapped_run(&run_dir, &config).unwrap();
    assert!(!tapped.is_empty());
    assert!(!runs::contains_sentinel(&tapped));
    let records = ledger(&run_dir);
    let failed = records
        .iter()
        .filter(|r| matches!(&r.event, LedgerEvent::Trial { record, .. } if record.status == TrialStatus::Failed))
        .count();
    assert_eq!(failed, 3, "each injected cycle fails its trial");
    assert!(!runs::contains_sentinel(&runs::ledger_bytes(&run_dir)));
}

#[test]
fn remote_responses_are_parsed_repaired_or_replaced() {
    let dir = tmp();
    let mut config = runs::sentinel_config(dir.path(), 3, 8);
    let responses = common::fixture("remote/responses.json");
    config.controller = ControllerConfig::Remote(RemoteConfig {
        endpoint: format!("fixture:{}", responses.display()),
        backoff_ms: 0,
        ..RemoteConfig::default()
    });
    let run_dir = dir.path().join("run");
    let (status, tapped) = runs::tapped_run(&run_dir, &config).unwrap();
    assert_eq!(status, RunStatus::Completed);
    assert!(!runs::contains_sentinel(&tapped));
    let proposals: Vec<(String, usize)> = ledger(&run_dir)
        .into_iter()
        .filter_map(|r| match r.event {
            LedgerEvent::Proposal {
                controller, repairs, ..
            } => Some((controller, repairs.len())),
            _ => None,
        })
        .collect();
    assert_eq!(proposals.len(), 3);
    assert_eq!(proposals[0], ("remote".to_string(), 0));
    assert_eq!(proposals[1], ("remote".to_string(), 1));
    assert_eq!(proposals[2].0, "fallback");
}

fn cli(dir: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_expert-nas"));
    c.env_remove("EXPERT_NAS_RUN_DIR")
        .env_remove("EXPERT_NAS_BUDGET")
        .env_remove("EXPERT_NAS_SEED")
        .env_remove("EXPERT_NAS_WORKERS")
        .env("RUST_LOG", "warn")
        .current_dir(dir);
    c
}

fn stdout(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn cli_runs_reports_and_resumes() {
    let dir = tmp();
    std::fs::write(dir.path().join("cfg.json"), tiny_config(1, 9).to_text()).unwrap();
    let out = cli(dir.path())
        .args(["--run-dir", "run", "--config", "cfg.json", "run"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).trim(), "status completed");

    let out = cli(dir.path())
        .env("EXPERT_NAS_RUN_DIR", "run")
        .args(["report", "--kind", "table"])
        .output()
        .unwrap();
    assert_eq!(
        stdout(&out),
        std::fs::read_to_string(dir.path().join("run/report_table.csv")).unwrap()
    );

    let out = cli(dir.path()).args(["--run-dir", "run", "resume"]).output().unwrap();
    assert_eq!(stdout(&out).trim(), "status completed");

    let out = cli(dir.path()).args(["--run-dir", "run", "eval"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).lines().count(), 4);
}

#[test]
fn cli_flags_override_env_which_overrides_config() {
    let dir = tmp();
    std::fs::write(dir.path().join("cfg.json"), tiny_config(5, 9).to_text()).unwrap();
    let init = |budget_env: Option<&str>, flag: Option<&str>, name: &str| {
        let mut c = cli(dir.path());
        if let Some(b) = budget_env {
            c.env("EXPERT_NAS_BUDGET", b);
        }
        c.args(["--run-dir", name, "--config", "cfg.json"]);
        if let Some(f) = flag {
            c.args(["--budget", f]);
        }
        let out = c.arg("init").output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let pinned = expert_nas::orchestrator::RunConfig::load(&dir.path().join(name).join(CONFIG_FILE)).unwrap();
        pinned.budget
    };
    assert_eq!(init(None, None, "a"), 5);
    assert_eq!(init(Some("2"), None, "b"), 2);
    assert_eq!(init(Some("2"), Some("1"), "c"), 1);
}

#[test]
fn cli_rejects_bad_input_with_usage_status() {
    let dir = tmp();
    let out = cli(dir.path()).arg("run").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run directory"));

    let bad = common::fixture("protocol/malformed/descriptor_even_kernel.json");
    let out = cli(dir.path()).arg("validate-descriptor").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stem.kernel"));

    let out = cli(dir.path())
        .arg("parse-ts")
        .arg(common::fixture("ts/malformed/ragged_series.ts"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 6"));
}

#[test]
fn cli_generates_and_parses_ts_files() {
    let dir = tmp();
    let out = cli(dir.path())
        .args([
            "--seed",
            "4",
            "gen-synthetic",
            "--out",
            "s.ts",
            "--format",
            "ts",
            "--samples",
            "12",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = cli(dir.path())
        .args(["parse-ts", "s.ts", "--out", "b.json"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("12 samples"));
    let bundle = expert_nas::data::DatasetBundle::load(&dir.path().join("b.json")).unwrap();
    assert_eq!(bundle.len(), 12);
}
