//! Reader and writer for the equal-length subset of the UEA `.ts` format.
//!
//! Accepted header tags (case-insensitive): `@problemName <name>`,
//! `@timeStamps false`, `@missing false`, `@univariate <bool>`,
//! `@dimensions <n>`, `@equalLength <bool>`, `@seriesLength <n>`,
//! `@classLabel false` or `@classLabel true <label>...`, then `@data`.
//! Blank lines and lines starting with `#` are ignored. Each data line holds
//! one series per dimension separated by `:`, values separated by `,`, and a
//! trailing class label when `@classLabel true`.

use std::fmt::Write as _;

#[derive(Clone, Debug, PartialEq)]
pub struct TsData {
    pub problem_name: String,
    pub dimensions: usize,
    pub series_len: usize,
    /// Labels declared in the `@classLabel` header, in header order.
    pub declared_labels: Option<Vec<String>>,
    /// `[n][dimension][t]`
    pub series: Vec<Vec<Vec<f64>>>,
    /// Contiguous indices into `label_names` (empty when unlabelled).
    pub labels: Vec<usize>,
    /// Label strings in first-appearance order over the data section.
    pub label_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TsError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unsupported feature: {feature}")]
    Unsupported { line: usize, feature: String },
    #[error("no data section")]
    NoData,
}

fn perr(line: usize, message: impl Into<String>) -> TsError {
    TsError::Parse {
        line,
        message: message.into(),
    }
}

fn unsupported(line: usize, feature: impl Into<String>) -> TsError {
    TsError::Unsupported {
        line,
        feature: feature.into(),
    }
}

fn parse_bool(v: Option<&str>, line: usize, tag: &str) -> Result<bool, TsError> {
    match v.map(str::to_ascii_lowercase).as_deref() {
        Some("true") => Ok(true),
        Some("false") => Ok(false),
        _ => Err(perr(line, format!("{tag} expects true or false"))),
    }
}

fn parse_count(v: Option<&str>, line: usize, tag: &str) -> Result<usize, TsError> {
    v.and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| perr(line, format!("{tag} expects a positive integer")))
}

#[derive(Default)]
struct Header {
    problem_name: Option<String>,
    univariate: Option<bool>,
    dimensions: Option<usize>,
    equal_length: Option<bool>,
    series_len: Option<usize>,
    class_label: Option<Option<Vec<String>>>,
}

pub fn parse_ts(bytes: &[u8]) -> Result<TsData, TsError> {
    let text = std::str::from_utf8(bytes).map_err(|e| perr(1, format!("not utf-8: {e}")))?;
    let mut h = Header::default();
    let mut in_data = false;
    let mut rows: Vec<(usize, &str)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if in_data {
            if line.starts_with('@') {
                return Err(perr(line_no, "header tag after @data"));
            }
            rows.push((line_no, line));
            continue;
        }
        if !line.starts_with('@') {
            return Err(perr(line_no, "data line before @data"));
        }
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap().to_ascii_lowercase();
        match tag.as_str() {
            "@problemname" => {
                let name = parts
                    .next()
                    .ok_or_else(|| perr(line_no, "@problemName expects a name"))?;
                h.problem_name = Some(name.to_string());
            }
            "@timestamps" => {
                if parse_bool(parts.next(), line_no, "@timeStamps")? {
                    return Err(unsupported(line_no, "time stamps"));
                }
            }
            "@missing" => {
                if parse_bool(parts.next(), line_no, "@missing")? {
                    return Err(unsupported(line_no, "missing values"));
                }
            }
            "@univariate" => h.univariate = Some(parse_bool(parts.next(), line_no, "@univariate")?),
            "@dimensions" => h.dimensions = Some(parse_count(parts.next(), line_no, "@dimensions")?),
            "@equallength" => {
                let eq = parse_bool(parts.next(), line_no, "@equalLength")?;
                if !eq {
                    return Err(unsupported(line_no, "unequal-length series"));
                }
                h.equal_length = Some(eq);
            }
            "@serieslength" => h.series_len = Some(parse_count(parts.next(), line_no, "@seriesLength")?),
            "@classlabel" => {
                if parse_bool(parts.next(), line_no, "@classLabel")? {
                    let labels: Vec<String> = parts.map(str::to_string).collect();
                    if labels.is_empty() {
                        return Err(perr(line_no, "@classLabel true expects at least one label"));
                    }
                    h.class_label = Some(Some(labels));
                } else {
                    h.class_label = Some(None);
                }
            }
            "@data" => in_data = true,
            other => return Err(unsupported(line_no, format!("header tag {other}"))),
        }
    }
    if !in_data {
        return Err(TsError::NoData);
    }
    let dims = match (h.univariate, h.dimensions) {
        (Some(true), Some(d)) if d != 1 => return Err(perr(0, "@univariate true conflicts with @dimensions")),
        (Some(true), _) => Some(1),
        (_, d) => d,
    };
    let declared = h.class_label.clone().flatten();
    let labelled = declared.is_some();
    let mut series = Vec::with_capacity(rows.len());
    let mut labels = Vec::new();
    let mut label_names: Vec<String> = Vec::new();
    let mut dims_seen = dims;
    let mut len_seen = h.series_len;
    for (line_no, line) in &rows {
        let mut fields: Vec<&str> = line.split(':').collect();
        if labelled {
            if fields.len() < 2 {
                return Err(perr(*line_no, "missing class label"));
            }
            let label = fields.pop().unwrap().trim();
            if !declared.as_ref().unwrap().iter().any(|l| l == label) {
                return Err(perr(*line_no, format!("undeclared class label `{label}`")));
            }
            let idx = match label_names.iter().position(|l| l == label) {
                Some(i) => i,
                None => {
                    label_names.push(label.to_string());
                    label_names.len() - 1
                }
            };
            labels.push(idx);
        }
        match dims_seen {
            Some(d) if d != fields.len() => {
                return Err(perr(
                    *line_no,
                    format!("expected {d} dimensions, found {}", fields.len()),
                ));
            }
            None => dims_seen = Some(fields.len()),
            _ => {}
        }
        let mut sample = Vec::with_capacity(fields.len());
        for f in fields {
            let mut vals = Vec::new();
            for v in f.split(',') {
                let v = v.trim();
                if v == "?" {
                    return Err(unsupported(*line_no, "missing values"));
                }
                let x: f64 = v.parse().map_err(|_| perr(*line_no, format!("invalid number `{v}`")))?;
                if !x.is_finite() {
                    return Err(perr(*line_no, format!("non-finite value `{v}`")));
                }
                vals.push(x);
            }
            match len_seen {
                Some(t) if t != vals.len() => {
                    return Err(if h.series_len.is_some() {
                        perr(*line_no, format!("expected series length {t}, found {}", vals.len()))
                    } else {
                        unsupported(*line_no, "unequal-length series")
                    });
                }
                None => len_seen = Some(vals.len()),
                _ => {}
            }
            sample.push(vals);
        }
        series.push(sample);
    }
    if series.is_empty() {
        return Err(TsError::NoData);
    }
    Ok(TsData {
        problem_name: h.problem_name.unwrap_or_default(),
        dimensions: dims_seen.unwrap(),
        series_len: len_seen.unwrap(),
        declared_labels: declared,
        series,
        labels,
        label_names,
    })
}

/// Writes the canonical form accepted by [`parse_ts`].
pub fn serialize_ts(data: &TsData) -> String {
    let mut out = String::new();
    let name = if data.problem_name.is_empty() {
        "unnamed"
    } else {
        &data.problem_name
    };
    let _ = writeln!(out, "@problemName {name}");
    out.push_str("@timeStamps false\n@missing false\n");
    let _ = writeln!(out, "@univariate {}", data.dimensions == 1);
    let _ = writeln!(out, "@dimensions {}", data.dimensions);
    out.push_str("@equalLength true\n");
    let _ = writeln!(out, "@seriesLength {}", data.series_len);
    match &data.declared_labels {
        Some(ls) => {
            let _ = writeln!(out, "@classLabel true {}", ls.join(" "));
        }
        None => out.push_str("@classLabel false\n"),
    }
    out.push_str("@data\n");
    for (i, sample) in data.series.iter().enumerate() {
        let dims: Vec<String> = sample
            .iter()
            .map(|s| s.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","))
            .collect();
        out.push_str(&dims.join(":"));
        if data.declared_labels.is_some() {
            out.push(':');
            out.push_str(&data.label_names[data.labels[i]]);
        }
        out.push('\n');
    }
    out
}

impl TsData {
    /// Labelled `.ts` view of a bundle; modality partition and splits are
    /// not representable and are dropped.
    pub fn from_bundle(b: &super::DatasetBundle) -> Self {
        let (t, d) = (b.series_len, b.variates);
        let series = (0..b.len())
            .map(|i| {
                let x = &b.values[i * t * d..(i + 1) * t * d];
                (0..d).map(|k| (0..t).map(|ti| x[ti * d + k]).collect()).collect()
            })
            .collect();
        Self {
            problem_name: b.name.clone(),
            dimensions: d,
            series_len: t,
            declared_labels: Some(b.class_names.clone()),
            series,
            labels: b.labels.clone(),
            label_names: b.class_names.clone(),
        }
    }

    /// Flattens to `[n, T, d]` row-major.
    pub fn to_values(&self) -> Vec<f64> {
        let (t, d) = (self.series_len, self.dimensions);
        let mut out = Vec::with_capacity(self.series.len() * t * d);
        for s in &self.series {
            for ti in 0..t {
                for dim in s {
                    out.push(dim[ti]);
                }
            }
        }
        out
    }
}
