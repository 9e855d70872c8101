//! Rule-based descriptor repair.
//!
//! | rejection                     | action                              |
//! |-------------------------------|-------------------------------------|
//! | even kernel                   | round up to the next odd value      |
//! | numeric out of range          | clamp into the range                |
//! | unknown field                 | drop it                             |
//! | missing / mistyped field      | copy from the baseline descriptor   |
//! | unknown layer kind, no blocks | unrepairable                        |

use serde_json::{json, Value};

use crate::arch::{
    parse_value, ArchDescriptor, DOWNSAMPLE_FACTORS, MAX_BRANCHES, MAX_CHANNELS, MAX_DEPTH, MAX_PREPROC_STEPS,
    RULE_AT_LEAST_ONE_BLOCK, RULE_KERNEL_ODD, RULE_UNKNOWN_KIND, RULE_VERSION, SCHEMA_VERSION,
};
use crate::validation::{Rejection, Rejections, RULE_MISSING, RULE_UNKNOWN_FIELD};

const MAX_PASSES: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("unrepairable descriptor: {0}")]
pub struct RepairError(pub Rejections);

#[derive(Debug, Clone, PartialEq)]
pub struct Repaired {
    pub descriptor: ArchDescriptor,
    /// One line per applied rule, e.g. `blocks[1].kernel: 4 -> 5`.
    pub actions: Vec<String>,
}

/// Repairs descriptor text given the rejections it produced.
pub fn repair(text: &str, rejections: &Rejections) -> Result<Repaired, RepairError> {
    let v = extract_json(text).ok_or_else(|| RepairError(Rejections::single("$", "malformed document")))?;
    repair_value(v, rejections)
}

/// Pulls the outermost JSON object out of text that may carry prose or
/// code fences around it.
fn extract_json(text: &str) -> Option<Value> {
    if let Ok(v) = serde_json::from_str::<Value>(text) {
        return Some(v);
    }
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    serde_json::from_str(text.get(start..=end)?).ok()
}

pub fn repair_value(mut v: Value, rejections: &Rejections) -> Result<Repaired, RepairError> {
    let baseline = ArchDescriptor::baseline().to_value();
    let mut actions = Vec::new();
    let mut current = rejections.clone();
    for _ in 0..MAX_PASSES {
        let mut changed = false;
        for r in current.iter() {
            match fix(&mut v, &baseline, r) {
                Fix::Applied(a) => {
                    actions.push(a);
                    changed = true;
                }
                Fix::Skip => {}
                Fix::Fatal => return Err(RepairError(Rejections(vec![r.clone()]))),
            }
        }
        match parse_value(&v) {
            Ok(d) => return Ok(Repaired { descriptor: d, actions }),
            Err(e) => {
                if !changed && e == current {
                    return Err(RepairError(e));
                }
                current = e;
            }
        }
    }
    Err(RepairError(current))
}

enum Fix {
    Applied(String),
    Skip,
    Fatal,
}

#[derive(Clone, Debug, PartialEq)]
enum Seg {
    Key(String),
    Index(usize),
}

fn segments(path: &str) -> Vec<Seg> {
    let mut out = Vec::new();
    if path.is_empty() || path == "$" {
        return out;
    }
    for part in path.split('.') {
        let mut rest = part;
        if let Some(i) = rest.find('[') {
            if i > 0 {
                out.push(Seg::Key(rest[..i].to_string()));
            }
            rest = &rest[i..];
            while let Some(stripped) = rest.strip_prefix('[') {
                let close = stripped.find(']').unwrap_or(stripped.len());
                if let Ok(n) = stripped[..close].parse() {
                    out.push(Seg::Index(n));
                }
                rest = stripped.get(close + 1..).unwrap_or("");
            }
        } else {
            out.push(Seg::Key(rest.to_string()));
        }
    }
    out
}

fn get<'a>(v: &'a Value, segs: &[Seg]) -> Option<&'a Value> {
    segs.iter().try_fold(v, |cur, s| match s {
        Seg::Key(k) => cur.get(k),
        Seg::Index(i) => cur.get(*i),
    })
}

fn get_mut<'a>(v: &'a mut Value, segs: &[Seg]) -> Option<&'a mut Value> {
    segs.iter().try_fold(v, |cur, s| match s {
        Seg::Key(k) => cur.get_mut(k),
        Seg::Index(i) => cur.get_mut(*i),
    })
}

fn set(v: &mut Value, segs: &[Seg], new: Value) -> bool {
    let Some((last, parent)) = segs.split_last() else {
        *v = new;
        return true;
    };
    match (get_mut(v, parent), last) {
        (Some(Value::Object(m)), Seg::Key(k)) => {
            m.insert(k.clone(), new);
            true
        }
        (Some(Value::Array(a)), Seg::Index(i)) if *i < a.len() => {
            a[*i] = new;
            true
        }
        _ => false,
    }
}

fn remove(v: &mut Value, segs: &[Seg]) -> bool {
    let Some((Seg::Key(k), parent)) = segs.split_last() else {
        return false;
    };
    match get_mut(v, parent) {
        Some(Value::Object(m)) => m.remove(k).is_some(),
        _ => false,
    }
}

/// Value to copy for a missing or mistyped field: the same path in the
/// baseline, else the same field of a baseline block of the same kind,
/// else a plain conv default.
fn baseline_value(v: &Value, baseline: &Value, segs: &[Seg]) -> Option<Value> {
    if let [Seg::Key(b), Seg::Index(i), Seg::Key(field), ..] = segs {
        if b == "blocks" {
            let kind = v.get("blocks")?.get(*i)?.get("kind")?.as_str()?;
            let same_kind = baseline["blocks"]
                .as_array()?
                .iter()
                .find(|blk| blk["kind"] == kind)
                .and_then(|blk| blk.get(field))
                .cloned();
            if same_kind.is_some() {
                return same_kind;
            }
            let conv = json!({"channels": 32, "kernel": 5, "stride": 1, "dilation": 1, "residual": false,
                "norm": "batch", "activation": "relu", "dropout": 0.0});
            return conv.get(field).cloned();
        }
    }
    get(baseline, segs).cloned()
}

/// `"<name> must be in [lo, hi]"` → `(lo, hi)`.
fn parse_range(rule: &str) -> Option<(f64, f64)> {
    let open = rule.find('[')?;
    let close = rule[open..].find(']')? + open;
    let (lo, hi) = rule[open + 1..close].split_once(',')?;
    Some((lo.trim().parse().ok()?, hi.trim().parse().ok()?))
}

fn truncate_array(v: &mut Value, segs: &[Seg], n: usize) -> Option<String> {
    let a = get_mut(v, segs)?.as_array_mut()?;
    if a.len() <= n {
        return None;
    }
    let flatten_last = a.last().is_some_and(|b| b.get("kind") == Some(&json!("flatten")));
    let old = a.len();
    if flatten_last && n > 0 {
        let f = a.pop().unwrap();
        a.truncate(n - 1);
        a.push(f);
    } else {
        a.truncate(n);
    }
    Some(format!("length {old} -> {n}"))
}

fn fix(v: &mut Value, baseline: &Value, r: &Rejection) -> Fix {
    let segs = segments(&r.path);
    let rule = r.rule.as_str();
    let at = |what: String| Fix::Applied(format!("{}: {what}", if r.path.is_empty() { "$" } else { &r.path }));

    if rule.starts_with(RULE_UNKNOWN_KIND)
        || rule.starts_with("unknown preprocessing kind")
        || rule == RULE_AT_LEAST_ONE_BLOCK
    {
        return Fix::Fatal;
    }
    if rule.starts_with("malformed document") || rule == "flatten must be the last block" {
        return Fix::Fatal;
    }
    if rule == RULE_KERNEL_ODD {
        return match get(v, &segs).and_then(Value::as_u64) {
            Some(k) => {
                set(v, &segs, json!(k + 1));
                at(format!("{k} -> {}", k + 1))
            }
            None => Fix::Skip,
        };
    }
    if rule == RULE_UNKNOWN_FIELD {
        return if remove(v, &segs) {
            at("dropped".into())
        } else {
            Fix::Skip
        };
    }
    if rule.starts_with(RULE_VERSION) {
        set(v, &segs, json!(SCHEMA_VERSION));
        return at(format!("set to {SCHEMA_VERSION}"));
    }
    if rule.starts_with("total channels") {
        let mut parent = segs.clone();
        parent.pop();
        let n = get(v, &parent)
            .and_then(|b| b.get("branch_kernels"))
            .and_then(Value::as_array)
            .map_or(1, |a| a.len().max(1)) as u64;
        set(v, &segs, json!(MAX_CHANNELS as u64 / n));
        return at("clamped".into());
    }
    if let Some((lo, hi)) = parse_range(rule) {
        return match get(v, &segs).and_then(Value::as_f64) {
            Some(x) => {
                let c = x.clamp(lo, hi);
                let new = if is_integral_field(&segs) {
                    json!(c.round() as u64)
                } else {
                    json!(c)
                };
                set(v, &segs, new.clone());
                at(format!("{x} -> {new}"))
            }
            None => Fix::Skip,
        };
    }
    if rule.starts_with("factor must be one of") {
        let f = get(v, &segs).and_then(Value::as_f64).unwrap_or(1.0);
        let nearest = DOWNSAMPLE_FACTORS
            .iter()
            .copied()
            .min_by(|a, b| (*a as f64 - f).abs().total_cmp(&(*b as f64 - f).abs()))
            .unwrap();
        set(v, &segs, json!(nearest));
        return at(format!("{f} -> {nearest}"));
    }
    if rule == "sigma must be positive" {
        set(v, &segs, json!(0.1));
        return at("-> 0.1".into());
    }
    if rule == "residual blocks require stride 1" {
        set(v, &segs, json!(1));
        return at("-> 1".into());
    }
    if rule.starts_with("pooling must be") {
        set(v, &segs, json!("global-average"));
        return at("-> global-average".into());
    }
    if rule.starts_with("at most") {
        let n = if r.path == "blocks" {
            MAX_DEPTH
        } else {
            MAX_PREPROC_STEPS
        };
        return truncate_array(v, &segs, n).map_or(Fix::Skip, at);
    }
    if rule.starts_with("between 1 and") {
        return truncate_array(v, &segs, MAX_BRANCHES).map_or(Fix::Fatal, at);
    }
    if rule == RULE_MISSING || rule.starts_with("expected ") || rule.contains(" must be one of ") {
        return match baseline_value(v, baseline, &segs) {
            Some(b) => {
                set(v, &segs, b);
                at("copied from baseline".into())
            }
            None => Fix::Fatal,
        };
    }
    Fix::Fatal
}

fn is_integral_field(segs: &[Seg]) -> bool {
    matches!(segs.last(), Some(Seg::Key(k)) if ["channels", "kernel", "stride", "dilation", "bottleneck_channels",
        "out_channels_per_branch", "output", "factor", "schema_version"].contains(&k.as_str()))
        || matches!(segs.last(), Some(Seg::Index(_)))
}
