mod common;

use std::collections::BTreeMap;
use std::path::Path;

use expert_nas::data::{parse_ts, serialize_ts, TsError};
use serde::Deserialize;

#[derive(Deserialize)]
struct ValidExpectation {
    samples: usize,
    dimensions: usize,
    series_len: usize,
    labels: Option<Vec<String>>,
}

#[derive(Deserialize)]
struct Rejection {
    error: String,
    line: Option<usize>,
}

fn expectations<T: for<'de> Deserialize<'de>>(dir: &Path) -> BTreeMap<String, T> {
    let text = std::fs::read_to_string(dir.join("expected.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Every `.ts` file in `dir` has an expectation and vice versa.
fn corpus(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".ts"))
        .collect();
    names.sort();
    names
}

#[test]
fn valid_files_parse_as_documented() {
    let dir = common::fixture("ts/valid");
    let expected: BTreeMap<String, ValidExpectation> = expectations(&dir);
    let files = corpus(&dir);
    assert_eq!(files, expected.keys().cloned().collect::<Vec<_>>());
    for name in files {
        let data = parse_ts(&std::fs::read(dir.join(&name)).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        let want = &expected[&name];
        assert_eq!(data.series.len(), want.samples, "{name}");
        assert_eq!(data.dimensions, want.dimensions, "{name}");
        assert_eq!(data.series_len, want.series_len, "{name}");
        assert_eq!(data.declared_labels, want.labels, "{name}");
        for sample in &data.series {
            assert_eq!(sample.len(), data.dimensions, "{name}");
            assert!(sample.iter().all(|s| s.len() == data.series_len), "{name}");
        }
    }
}

#[test]
fn parse_serialize_parse_is_identity() {
    let dir = common::fixture("ts/valid");
    for name in corpus(&dir) {
        let first = parse_ts(&std::fs::read(dir.join(&name)).unwrap()).unwrap();
        let text = serialize_ts(&first);
        let second = parse_ts(text.as_bytes()).unwrap();
        assert_eq!(first, second, "{name}");
        assert_eq!(serialize_ts(&second), text, "{name}: canonical form is stable");
    }
}

#[test]
fn malformed_files_are_rejected_as_documented() {
    let dir = common::fixture("ts/malformed");
    let expected: BTreeMap<String, Rejection> = expectations(&dir);
    let files = corpus(&dir);
    assert_eq!(files.len(), 10);
    assert_eq!(files, expected.keys().cloned().collect::<Vec<_>>());
    for name in files {
        let err = parse_ts(&std::fs::read(dir.join(&name)).unwrap()).expect_err(&name);
        let want = &expected[&name];
        let (kind, line) = match &err {
            TsError::Parse { line, .. } => ("parse", Some(*line)),
            TsError::Unsupported { line, .. } => ("unsupported", Some(*line)),
            TsError::NoData => ("no-data", None),
        };
        assert_eq!((kind, line), (want.error.as_str(), want.line), "{name}: {err}");
    }
}
