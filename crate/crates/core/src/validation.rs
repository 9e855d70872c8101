//! Structured rejections shared by every document parser.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// One violated rule at a path into a document (`blocks[1].kernel`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub path: String,
    pub rule: String,
}

impl Rejection {
    pub fn new(path: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.rule)
    }
}

/// Non-empty list of rejections.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub struct Rejections(pub Vec<Rejection>);

impl Rejections {
    pub fn single(path: impl Into<String>, rule: impl Into<String>) -> Self {
        Self(vec![Rejection::new(path, rule)])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Rejection> {
        self.0.iter()
    }

    pub fn mentions(&self, path: &str) -> bool {
        self.0.iter().any(|r| {
            r.path == path || r.path.starts_with(&format!("{path}.")) || r.path.starts_with(&format!("{path}["))
        })
    }
}

impl fmt::Display for Rejections {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, r) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{r}")?;
        }
        Ok(())
    }
}

pub const RULE_MISSING: &str = "missing required field";
pub const RULE_UNKNOWN_FIELD: &str = "unknown field";

pub(crate) fn join(path: &str, key: &str) -> String {
    if path.is_empty() || path == "$" {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

/// Collects rejections while reading fields out of JSON objects.
#[derive(Default)]
pub(crate) struct Checker {
    pub errs: Vec<Rejection>,
}

impl Checker {
    pub fn reject(&mut self, path: impl Into<String>, rule: impl Into<String>) {
        self.errs.push(Rejection::new(path, rule));
    }

    pub fn object<'a>(&mut self, v: &'a Value, path: &str) -> Option<&'a Map<String, Value>> {
        match v.as_object() {
            Some(m) => Some(m),
            None => {
                self.reject(path, "expected object");
                None
            }
        }
    }

    pub fn unknown_fields(&mut self, map: &Map<String, Value>, allowed: &[&str], path: &str) {
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                self.reject(join(path, key), RULE_UNKNOWN_FIELD);
            }
        }
    }

    pub fn field<'a>(&mut self, map: &'a Map<String, Value>, key: &str, path: &str) -> Option<&'a Value> {
        let v = map.get(key);
        if v.is_none() {
            self.reject(join(path, key), RULE_MISSING);
        }
        v
    }

    pub fn uint(&mut self, map: &Map<String, Value>, key: &str, path: &str, lo: u64, hi: u64) -> Option<u64> {
        let v = self.field(map, key, path)?;
        self.uint_value(v, &join(path, key), key, lo, hi)
    }

    pub fn uint_value(&mut self, v: &Value, path: &str, name: &str, lo: u64, hi: u64) -> Option<u64> {
        match v.as_u64() {
            Some(n) if (lo..=hi).contains(&n) => Some(n),
            Some(_) => {
                self.reject(path, format!("{name} must be in [{lo}, {hi}]"));
                None
            }
            None if v.as_f64().is_some() => {
                self.reject(path, format!("{name} must be in [{lo}, {hi}]"));
                None
            }
            None => {
                self.reject(path, "expected integer");
                None
            }
        }
    }

    pub fn number(&mut self, map: &Map<String, Value>, key: &str, path: &str, lo: f64, hi: f64) -> Option<f64> {
        let v = self.field(map, key, path)?;
        let p = join(path, key);
        match v.as_f64() {
            Some(x) if x >= lo && x <= hi => Some(x),
            Some(_) => {
                self.reject(p, format!("{key} must be in [{lo}, {hi}]"));
                None
            }
            None => {
                self.reject(p, "expected number");
                None
            }
        }
    }

    pub fn boolean(&mut self, map: &Map<String, Value>, key: &str, path: &str) -> Option<bool> {
        let v = self.field(map, key, path)?;
        match v.as_bool() {
            Some(b) => Some(b),
            None => {
                self.reject(join(path, key), "expected boolean");
                None
            }
        }
    }

    pub fn string<'a>(&mut self, map: &'a Map<String, Value>, key: &str, path: &str) -> Option<&'a str> {
        let v = self.field(map, key, path)?;
        match v.as_str() {
            Some(s) => Some(s),
            None => {
                self.reject(join(path, key), "expected string");
                None
            }
        }
    }

    pub fn array<'a>(&mut self, map: &'a Map<String, Value>, key: &str, path: &str) -> Option<&'a Vec<Value>> {
        let v = self.field(map, key, path)?;
        match v.as_array() {
            Some(a) => Some(a),
            None => {
                self.reject(join(path, key), "expected array");
                None
            }
        }
    }

    pub fn finish<T>(self, value: Option<T>) -> Result<T, Rejections> {
        match (self.errs.is_empty(), value) {
            (true, Some(v)) => Ok(v),
            (true, None) => Err(Rejections::single("$", "invalid document")),
            (false, _) => Err(Rejections(self.errs)),
        }
    }
}

/// Compact JSON with sorted keys (serde_json maps are ordered) and shortest
/// round-trip number formatting.
pub fn canonical_json(v: &Value) -> String {
    serde_json::to_string(v).expect("json values always serialize")
}
