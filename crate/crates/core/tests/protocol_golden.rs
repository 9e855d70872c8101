mod common;

use expert_nas::arch::{parse_descriptor, parse_pair, ArchDescriptor};
use expert_nas::controller::repair;
use expert_nas::protocol::{parse_directive, parse_record, parse_results, replay, scan, DirectiveContext, LedgerEvent};
use expert_nas::validation::Rejections;
use serde::Deserialize;

const CTX: DirectiveContext<'static> = DirectiveContext {
    modalities: 2,
    classes: 3,
    run_dir: None,
};

/// Hex SHA-256 of the canonical baseline descriptor; changes only when
/// the baseline or the canonical encoding changes.
const BASELINE_HASH: &str = "c17f10aa63bcb666044cc6ac9a92ebf1f7c6d48d25ce0adee4983065bdb52fad";
const DENSE_ONLY_HASH: &str = "4db895b34aaf7c887eb05d34904530e9bd53280f49417e4a58a8c9418a3c2e90";

fn read(rel: &str) -> Vec<u8> {
    std::fs::read(common::fixture(rel)).unwrap()
}

#[test]
fn directive_round_trips_bit_exactly() {
    let bytes = read("protocol/directive.json");
    let d = parse_directive(&bytes, &CTX).unwrap();
    assert_eq!(d.to_text().as_bytes(), bytes.as_slice());
}

#[test]
fn results_round_trip_bit_exactly() {
    let bytes = read("protocol/results.json");
    let r = parse_results(&bytes).unwrap();
    assert_eq!(r.to_text().as_bytes(), bytes.as_slice());
}

#[test]
fn ledger_round_trips_bit_exactly() {
    let bytes = read("protocol/ledger.jsonl");
    let text = String::from_utf8(bytes.clone()).unwrap();
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let record = parse_record(line.trim_end().as_bytes()).unwrap();
        assert_eq!(record.to_line(), line, "line {}", i + 1);
    }
    let scanned = scan(&bytes).unwrap();
    assert_eq!(scanned.records.len(), bytes.iter().filter(|&&b| b == b'\n').count());
    let state = replay(&scanned.records);
    assert_eq!(state.records, scanned.records.len() as u64);
    assert!(matches!(scanned.records[0].event, LedgerEvent::RunStarted { .. }));
}

#[test]
fn baseline_descriptor_hash_is_pinned() {
    let d = parse_pair(
        &read("protocol/baseline_model.json"),
        &read("protocol/baseline_preprocessing.json"),
    )
    .unwrap();
    assert_eq!(d, ArchDescriptor::baseline());
    assert_eq!(d.canonical_hash().as_str(), BASELINE_HASH);
    let dense = parse_pair(
        &read("protocol/dense_only_model.json"),
        &read("protocol/dense_only_preprocessing.json"),
    )
    .unwrap();
    assert_eq!(dense, ArchDescriptor::dense_only());
    assert_eq!(dense.canonical_hash().as_str(), DENSE_ONLY_HASH);
    assert_eq!(
        String::from_utf8(read("protocol/dense_only_model.json")).unwrap(),
        dense.model_file()
    );
}

#[derive(Deserialize)]
struct Variant {
    file: String,
    kind: String,
    field: String,
}

fn reject(kind: &str, bytes: &[u8]) -> Option<Rejections> {
    match kind {
        "directive" => parse_directive(bytes, &CTX).err(),
        "results" => parse_results(bytes).err(),
        "ledger" => parse_record(bytes.strip_suffix(b"\n").unwrap_or(bytes)).err(),
        "descriptor" => parse_descriptor(bytes).err(),
        other => panic!("unknown document kind {other}"),
    }
}

#[test]
fn malformed_variants_name_the_offending_field() {
    let index: Vec<Variant> = serde_json::from_slice(&read("protocol/malformed/index.json")).unwrap();
    assert_eq!(index.len(), 20);
    for v in index {
        let bytes = read(&format!("protocol/malformed/{}", v.file));
        let rejections = reject(&v.kind, &bytes).unwrap_or_else(|| panic!("{} was accepted", v.file));
        assert!(
            rejections.iter().any(|r| r.path == v.field),
            "{}: expected a rejection at `{}`, got {rejections}",
            v.file,
            v.field
        );
    }
}

#[test]
fn recorded_remote_responses_parse_or_repair() {
    let valid = String::from_utf8(read("remote/valid_response.txt")).unwrap();
    let start = valid.find('{').unwrap();
    let end = valid.rfind('}').unwrap();
    let obj: serde_json::Value = serde_json::from_str(&valid[start..=end]).unwrap();
    parse_descriptor(obj["descriptor"].to_string().as_bytes()).unwrap();

    let even: serde_json::Value = serde_json::from_slice(&read("remote/even_kernel_response.txt")).unwrap();
    let text = even["descriptor"].to_string();
    let rejections = parse_descriptor(text.as_bytes()).unwrap_err();
    assert!(rejections.iter().any(|r| r.path == "blocks[0].kernel"), "{rejections}");
    let fixed = repair(&text, &rejections).unwrap();
    assert_eq!(fixed.actions.len(), 1, "{:?}", fixed.actions);
    fixed.descriptor.validate().unwrap();
}
