//! Strict decoding into typed documents with path-qualified rejections.

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::validation::{canonical_json, join, Rejection, Rejections, RULE_MISSING, RULE_UNKNOWN_FIELD};

pub const SCHEMA_VERSION: u64 = 1;

/// Canonical text: compact JSON, sorted keys, trailing newline.
pub fn to_canonical<T: Serialize>(value: &T) -> String {
    canonical_json(&serde_json::to_value(value).expect("protocol types serialize")) + "\n"
}

fn backticked(msg: &str) -> Option<&str> {
    let start = msg.find('`')? + 1;
    let end = start + msg[start..].find('`')?;
    Some(&msg[start..end])
}

fn path_string(p: &serde_path_to_error::Path) -> String {
    let s = p.to_string();
    if s == "." {
        String::new()
    } else {
        s
    }
}

/// Decodes `bytes`, translating serde failures into a rejection whose path
/// names the offending field.
pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, Rejections> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let base = path_string(e.path());
        let msg = e.inner().to_string();
        let msg = msg.split(" at line ").next().unwrap_or(&msg).to_string();
        let rej = if msg.starts_with("missing field") {
            Rejection::new(join(&base, backticked(&msg).unwrap_or("?")), RULE_MISSING)
        } else if msg.starts_with("unknown field") {
            // the path already ends at the offending key
            Rejection::new(if base.is_empty() { "$".into() } else { base }, RULE_UNKNOWN_FIELD)
        } else if e.inner().is_syntax() || e.inner().is_eof() {
            Rejection::new(
                if base.is_empty() { "$".into() } else { base },
                format!("malformed document: {msg}"),
            )
        } else {
            Rejection::new(if base.is_empty() { "$".into() } else { base }, msg)
        };
        Rejections(vec![rej])
    })?;
    de.end()
        .map_err(|e| Rejections::single("$", format!("trailing characters: {e}")))?;
    Ok(value)
}

pub(crate) fn check_unit(errs: &mut Vec<Rejection>, path: impl Into<String>, v: f64) {
    if !(0.0..=1.0).contains(&v) {
        errs.push(Rejection::new(path, "must be in [0, 1]"));
    }
}

pub(crate) fn check_version(errs: &mut Vec<Rejection>, v: u64) {
    if v != SCHEMA_VERSION {
        errs.push(Rejection::new(
            "schema_version",
            format!("schema version mismatch: expected {SCHEMA_VERSION}"),
        ));
    }
}

pub(crate) fn finish<T>(value: T, errs: Vec<Rejection>) -> Result<T, Rejections> {
    if errs.is_empty() {
        Ok(value)
    } else {
        Err(Rejections(errs))
    }
}
