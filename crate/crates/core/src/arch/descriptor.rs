//! Architecture descriptor types, canonical serialisation and validation.

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::validation::{canonical_json, join, Checker, Rejections};

pub const SCHEMA_VERSION: u64 = 1;
pub const MAX_DEPTH: usize = 16;
pub const MAX_KERNEL: usize = 101;
pub const MAX_CHANNELS: usize = 1024;
pub const MAX_DROPOUT: f64 = 0.9;
pub const MAX_STRIDE: usize = 4;
pub const MAX_DILATION: usize = 16;
pub const MAX_BRANCHES: usize = 4;
pub const MAX_PREPROC_STEPS: usize = 8;
pub const MAX_CLIP_SIGMA: f64 = 10.0;
pub const DOWNSAMPLE_FACTORS: [usize; 4] = [1, 2, 4, 8];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormKind {
    Batch,
    Layer,
    None,
}

impl NormKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::Batch => "batch",
            NormKind::Layer => "layer",
            NormKind::None => "none",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "batch" => Some(NormKind::Batch),
            "layer" => Some(NormKind::Layer),
            "none" => Some(NormKind::None),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActKind {
    Gelu,
    Relu,
    None,
}

impl ActKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActKind::Gelu => "gelu",
            ActKind::Relu => "relu",
            ActKind::None => "none",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "gelu" => Some(ActKind::Gelu),
            "relu" => Some(ActKind::Relu),
            "none" => Some(ActKind::None),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PreprocStep {
    ZscorePerChannel,
    MinmaxPerChannel,
    DetrendLinear,
    Downsample { factor: usize },
    Clip { sigma: f64 },
}

impl PreprocStep {
    pub fn kind(&self) -> &'static str {
        match self {
            PreprocStep::ZscorePerChannel => "zscore-per-channel",
            PreprocStep::MinmaxPerChannel => "minmax-per-channel",
            PreprocStep::DetrendLinear => "detrend-linear",
            PreprocStep::Downsample { .. } => "downsample",
            PreprocStep::Clip { .. } => "clip",
        }
    }

    fn to_value(&self) -> Value {
        match self {
            PreprocStep::Downsample { factor } => json!({"kind": "downsample", "factor": factor}),
            PreprocStep::Clip { sigma } => json!({"kind": "clip", "sigma": sigma}),
            other => json!({ "kind": other.kind() }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StemSpec {
    pub channels: usize,
    pub kernel: usize,
    pub norm: NormKind,
    pub activation: ActKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub residual: bool,
    pub norm: NormKind,
    pub activation: ActKind,
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InceptionBlock {
    pub branch_kernels: Vec<usize>,
    pub bottleneck_channels: usize,
    pub out_channels_per_branch: usize,
    pub residual: bool,
    pub norm: NormKind,
    pub activation: ActKind,
    pub dropout: f64,
}

impl InceptionBlock {
    pub fn out_channels(&self) -> usize {
        self.branch_kernels.len() * self.out_channels_per_branch
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlockSpec {
    Conv1d(ConvBlock),
    Inception(InceptionBlock),
    /// `[T, C] -> [1, T*C]`; only allowed as the last block.
    Flatten,
}

impl BlockSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            BlockSpec::Conv1d(_) => "conv1d",
            BlockSpec::Inception(_) => "inception",
            BlockSpec::Flatten => "flatten",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadSpec {
    /// Only global average pooling over time is supported.
    pub dropout: f64,
}

/// One expert's preprocessing plus network: the unit of search.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchDescriptor {
    pub schema_version: u64,
    pub preprocessing: Vec<PreprocStep>,
    pub stem: Option<StemSpec>,
    pub blocks: Vec<BlockSpec>,
    pub head: HeadSpec,
    /// Width of the final linear layer (1 for binary experts).
    pub output: usize,
}

/// Hex SHA-256 of the canonical combined document.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DescriptorHash(pub String);

impl DescriptorHash {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn short(&self) -> &str {
        &self.0[..12.min(self.0.len())]
    }
}

impl std::fmt::Display for DescriptorHash {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl ArchDescriptor {
    /// Stem conv1d(32, k=7) followed by two residual inception blocks with
    /// branch kernels {9, 19, 39}, then global average pooling and a linear
    /// output.
    pub fn baseline() -> Self {
        let inception = InceptionBlock {
            branch_kernels: vec![9, 19, 39],
            bottleneck_channels: 32,
            out_channels_per_branch: 32,
            residual: true,
            norm: NormKind::Batch,
            activation: ActKind::Gelu,
            dropout: 0.2,
        };
        Self {
            schema_version: SCHEMA_VERSION,
            preprocessing: vec![PreprocStep::ZscorePerChannel],
            stem: Some(StemSpec {
                channels: 32,
                kernel: 7,
                norm: NormKind::Batch,
                activation: ActKind::Gelu,
            }),
            blocks: vec![BlockSpec::Inception(inception.clone()), BlockSpec::Inception(inception)],
            head: HeadSpec { dropout: 0.2 },
            output: 1,
        }
    }

    /// Flatten straight into the output layer (a linear model on raw samples).
    pub fn dense_only() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            preprocessing: vec![],
            stem: None,
            blocks: vec![BlockSpec::Flatten],
            head: HeadSpec { dropout: 0.0 },
            output: 1,
        }
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    /// Product of all downsample factors.
    pub fn downsample_factor(&self) -> usize {
        self.preprocessing
            .iter()
            .map(|s| match s {
                PreprocStep::Downsample { factor } => *factor,
                _ => 1,
            })
            .product()
    }

    pub fn model_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("schema_version".into(), json!(self.schema_version));
        m.insert(
            "stem".into(),
            match &self.stem {
                None => Value::Null,
                Some(s) => json!({
                    "channels": s.channels,
                    "kernel": s.kernel,
                    "norm": s.norm.as_str(),
                    "activation": s.activation.as_str(),
                }),
            },
        );
        m.insert(
            "blocks".into(),
            Value::Array(self.blocks.iter().map(block_value).collect()),
        );
        m.insert(
            "head".into(),
            json!({"pooling": "global-average", "dropout": self.head.dropout}),
        );
        m.insert("output".into(), json!(self.output));
        Value::Object(m)
    }

    pub fn preprocessing_value(&self) -> Value {
        json!({
            "schema_version": self.schema_version,
            "steps": self.preprocessing.iter().map(PreprocStep::to_value).collect::<Vec<_>>(),
        })
    }

    /// The combined document: model keys plus a `preprocessing` step list.
    pub fn to_value(&self) -> Value {
        let mut v = self.model_value();
        v.as_object_mut().unwrap().insert(
            "preprocessing".into(),
            Value::Array(self.preprocessing.iter().map(PreprocStep::to_value).collect()),
        );
        v
    }

    pub fn canonical_text(&self) -> String {
        canonical_json(&self.to_value())
    }

    pub fn canonical_hash(&self) -> DescriptorHash {
        DescriptorHash(hex::encode(Sha256::digest(self.canonical_text().as_bytes())))
    }

    /// `model.json` contents (canonical, newline-terminated).
    pub fn model_file(&self) -> String {
        canonical_json(&self.model_value()) + "\n"
    }

    /// `preprocessing.json` contents (canonical, newline-terminated).
    pub fn preprocessing_file(&self) -> String {
        canonical_json(&self.preprocessing_value()) + "\n"
    }

    /// Checks range rules on an in-memory descriptor.
    pub fn validate(&self) -> Result<(), Rejections> {
        parse_value(&self.to_value()).map(|_| ())
    }
}

fn block_value(b: &BlockSpec) -> Value {
    match b {
        BlockSpec::Conv1d(c) => json!({
            "kind": "conv1d",
            "channels": c.channels,
            "kernel": c.kernel,
            "stride": c.stride,
            "dilation": c.dilation,
            "residual": c.residual,
            "norm": c.norm.as_str(),
            "activation": c.activation.as_str(),
            "dropout": c.dropout,
        }),
        BlockSpec::Inception(i) => json!({
            "kind": "inception",
            "branch_kernels": i.branch_kernels,
            "bottleneck_channels": i.bottleneck_channels,
            "out_channels_per_branch": i.out_channels_per_branch,
            "residual": i.residual,
            "norm": i.norm.as_str(),
            "activation": i.activation.as_str(),
            "dropout": i.dropout,
        }),
        BlockSpec::Flatten => json!({"kind": "flatten"}),
    }
}

// ---------------------------------------------------------------------------
// Parsing

pub const RULE_KERNEL_ODD: &str = "kernel must be odd";
pub const RULE_AT_LEAST_ONE_BLOCK: &str = "at least one block";
pub const RULE_UNKNOWN_KIND: &str = "unknown layer kind";
pub const RULE_VERSION: &str = "schema version mismatch";

const MODEL_KEYS: [&str; 5] = ["schema_version", "stem", "blocks", "head", "output"];
const COMBINED_KEYS: [&str; 6] = ["schema_version", "preprocessing", "stem", "blocks", "head", "output"];

/// Parses a combined descriptor document.
pub fn parse_descriptor(text: &[u8]) -> Result<ArchDescriptor, Rejections> {
    let v: Value =
        serde_json::from_slice(text).map_err(|e| Rejections::single("$", format!("malformed document: {e}")))?;
    parse_value(&v)
}

/// Parses a `model.json` / `preprocessing.json` pair.
pub fn parse_pair(model: &[u8], preprocessing: &[u8]) -> Result<ArchDescriptor, Rejections> {
    let mv: Value =
        serde_json::from_slice(model).map_err(|e| Rejections::single("model", format!("malformed document: {e}")))?;
    let pv: Value = serde_json::from_slice(preprocessing)
        .map_err(|e| Rejections::single("preprocessing", format!("malformed document: {e}")))?;
    let mut ck = Checker::default();
    let model_version = mv.get("schema_version").and_then(Value::as_u64);
    let steps = ck.object(&pv, "preprocessing").and_then(|m| {
        ck.unknown_fields(m, &["schema_version", "steps"], "preprocessing");
        let version = ck.uint(m, "schema_version", "preprocessing", 0, u64::MAX);
        if let (Some(a), Some(b)) = (version, model_version) {
            if a != b {
                ck.reject("preprocessing.schema_version", "must match model schema_version");
            }
        }
        ck.array(m, "steps", "preprocessing").cloned()
    });
    let mut combined = match mv {
        Value::Object(m) => m,
        _ => {
            ck.reject("model", "expected object");
            Map::new()
        }
    };
    for key in combined.keys() {
        if !MODEL_KEYS.contains(&key.as_str()) {
            ck.reject(join("model", key), crate::validation::RULE_UNKNOWN_FIELD);
        }
    }
    combined.insert("preprocessing".into(), Value::Array(steps.unwrap_or_default()));
    let parsed = parse_value(&Value::Object(combined));
    match (ck.errs.is_empty(), parsed) {
        (true, r) => r,
        (false, Ok(_)) => Err(Rejections(ck.errs)),
        (false, Err(mut e)) => {
            ck.errs.append(&mut e.0);
            Err(Rejections(ck.errs))
        }
    }
}

/// Validating conversion from a JSON value.
pub fn parse_value(v: &Value) -> Result<ArchDescriptor, Rejections> {
    let mut ck = Checker::default();
    let d = parse_root(v, &mut ck);
    ck.finish(d)
}

fn parse_root(v: &Value, ck: &mut Checker) -> Option<ArchDescriptor> {
    let m = ck.object(v, "$")?;
    ck.unknown_fields(m, &COMBINED_KEYS, "");
    let version = ck.uint(m, "schema_version", "", 0, u64::MAX);
    if let Some(ver) = version {
        if ver != SCHEMA_VERSION {
            ck.reject("schema_version", format!("{RULE_VERSION}: expected {SCHEMA_VERSION}"));
        }
    }
    let preprocessing = ck.array(m, "preprocessing", "").map(|steps| {
        if steps.len() > MAX_PREPROC_STEPS {
            ck.reject("preprocessing", format!("at most {MAX_PREPROC_STEPS} steps"));
        }
        steps
            .iter()
            .enumerate()
            .filter_map(|(i, s)| parse_step(s, &format!("preprocessing[{i}]"), ck))
            .collect::<Vec<_>>()
    });
    let stem = match ck.field(m, "stem", "") {
        Some(Value::Null) => Some(None),
        Some(s) => parse_stem(s, ck).map(Some),
        None => None,
    };
    let blocks = ck.array(m, "blocks", "").map(|bs| {
        if bs.is_empty() {
            ck.reject("blocks", RULE_AT_LEAST_ONE_BLOCK);
        }
        if bs.len() > MAX_DEPTH {
            ck.reject("blocks", format!("at most {MAX_DEPTH} blocks"));
        }
        let parsed: Vec<Option<BlockSpec>> = bs
            .iter()
            .enumerate()
            .map(|(i, b)| parse_block(b, &format!("blocks[{i}]"), ck))
            .collect();
        for (i, b) in parsed.iter().enumerate() {
            if matches!(b, Some(BlockSpec::Flatten)) && i + 1 != parsed.len() {
                ck.reject(format!("blocks[{i}]"), "flatten must be the last block");
            }
        }
        parsed.into_iter().flatten().collect::<Vec<_>>()
    });
    let head = ck.field(m, "head", "").and_then(|h| {
        let hm = ck.object(h, "head")?;
        ck.unknown_fields(hm, &["pooling", "dropout"], "head");
        if let Some(p) = ck.string(hm, "pooling", "head") {
            if p != "global-average" {
                ck.reject("head.pooling", "pooling must be global-average");
            }
        }
        let dropout = ck.number(hm, "dropout", "head", 0.0, MAX_DROPOUT)?;
        Some(HeadSpec { dropout })
    });
    let output = ck.uint(m, "output", "", 1, MAX_CHANNELS as u64);
    Some(ArchDescriptor {
        schema_version: version?,
        preprocessing: preprocessing?,
        stem: stem?,
        blocks: blocks?,
        head: head?,
        output: output? as usize,
    })
}

fn parse_step(v: &Value, path: &str, ck: &mut Checker) -> Option<PreprocStep> {
    let m = ck.object(v, path)?;
    let kind = ck.string(m, "kind", path)?;
    match kind {
        "zscore-per-channel" | "minmax-per-channel" | "detrend-linear" => {
            ck.unknown_fields(m, &["kind"], path);
            Some(match kind {
                "zscore-per-channel" => PreprocStep::ZscorePerChannel,
                "minmax-per-channel" => PreprocStep::MinmaxPerChannel,
                _ => PreprocStep::DetrendLinear,
            })
        }
        "downsample" => {
            ck.unknown_fields(m, &["kind", "factor"], path);
            let f = ck.uint(m, "factor", path, 0, u64::MAX)? as usize;
            if !DOWNSAMPLE_FACTORS.contains(&f) {
                ck.reject(join(path, "factor"), "factor must be one of 1, 2, 4, 8");
                return None;
            }
            Some(PreprocStep::Downsample { factor: f })
        }
        "clip" => {
            ck.unknown_fields(m, &["kind", "sigma"], path);
            let sigma = ck.number(m, "sigma", path, 0.0, MAX_CLIP_SIGMA)?;
            if sigma <= 0.0 {
                ck.reject(join(path, "sigma"), "sigma must be positive");
                return None;
            }
            Some(PreprocStep::Clip { sigma })
        }
        other => {
            ck.reject(join(path, "kind"), format!("unknown preprocessing kind `{other}`"));
            None
        }
    }
}

fn norm_field(m: &Map<String, Value>, path: &str, ck: &mut Checker) -> Option<NormKind> {
    let s = ck.string(m, "norm", path)?;
    let n = NormKind::parse(s);
    if n.is_none() {
        ck.reject(join(path, "norm"), "norm must be one of batch, layer, none");
    }
    n
}

fn act_field(m: &Map<String, Value>, path: &str, ck: &mut Checker) -> Option<ActKind> {
    let s = ck.string(m, "activation", path)?;
    let a = ActKind::parse(s);
    if a.is_none() {
        ck.reject(join(path, "activation"), "activation must be one of gelu, relu, none");
    }
    a
}

fn kernel_value(v: &Value, path: &str, ck: &mut Checker) -> Option<usize> {
    let k = ck.uint_value(v, path, "kernel", 1, MAX_KERNEL as u64)? as usize;
    if k % 2 == 0 {
        ck.reject(path, RULE_KERNEL_ODD);
        return None;
    }
    Some(k)
}

fn kernel_field(m: &Map<String, Value>, path: &str, ck: &mut Checker) -> Option<usize> {
    let v = ck.field(m, "kernel", path)?;
    kernel_value(v, &join(path, "kernel"), ck)
}

fn parse_stem(v: &Value, ck: &mut Checker) -> Option<StemSpec> {
    let m = ck.object(v, "stem")?;
    ck.unknown_fields(m, &["channels", "kernel", "norm", "activation"], "stem");
    let channels = ck.uint(m, "channels", "stem", 1, MAX_CHANNELS as u64);
    let kernel = kernel_field(m, "stem", ck);
    let norm = norm_field(m, "stem", ck);
    let activation = act_field(m, "stem", ck);
    Some(StemSpec {
        channels: channels? as usize,
        kernel: kernel?,
        norm: norm?,
        activation: activation?,
    })
}

fn parse_block(v: &Value, path: &str, ck: &mut Checker) -> Option<BlockSpec> {
    let m = ck.object(v, path)?;
    let kind = ck.string(m, "kind", path)?;
    match kind {
        "conv1d" => {
            ck.unknown_fields(
                m,
                &[
                    "kind",
                    "channels",
                    "kernel",
                    "stride",
                    "dilation",
                    "residual",
                    "norm",
                    "activation",
                    "dropout",
                ],
                path,
            );
            let channels = ck.uint(m, "channels", path, 1, MAX_CHANNELS as u64);
            let kernel = kernel_field(m, path, ck);
            let stride = ck.uint(m, "stride", path, 1, MAX_STRIDE as u64);
            let dilation = ck.uint(m, "dilation", path, 1, MAX_DILATION as u64);
            let residual = ck.boolean(m, "residual", path);
            let norm = norm_field(m, path, ck);
            let activation = act_field(m, path, ck);
            let dropout = ck.number(m, "dropout", path, 0.0, MAX_DROPOUT);
            if residual == Some(true) && stride.is_some_and(|s| s != 1) {
                ck.reject(join(path, "stride"), "residual blocks require stride 1");
            }
            Some(BlockSpec::Conv1d(ConvBlock {
                channels: channels? as usize,
                kernel: kernel?,
                stride: stride? as usize,
                dilation: dilation? as usize,
                residual: residual?,
                norm: norm?,
                activation: activation?,
                dropout: dropout?,
            }))
        }
        "inception" => {
            ck.unknown_fields(
                m,
                &[
                    "kind",
                    "branch_kernels",
                    "bottleneck_channels",
                    "out_channels_per_branch",
                    "residual",
                    "norm",
                    "activation",
                    "dropout",
                ],
                path,
            );
            let kernels = ck.array(m, "branch_kernels", path).and_then(|ks| {
                let kp = join(path, "branch_kernels");
                if ks.is_empty() || ks.len() > MAX_BRANCHES {
                    ck.reject(&kp, format!("between 1 and {MAX_BRANCHES} branches"));
                    return None;
                }
                let parsed: Vec<Option<usize>> = ks
                    .iter()
                    .enumerate()
                    .map(|(i, k)| kernel_value(k, &format!("{kp}[{i}]"), ck))
                    .collect();
                parsed.into_iter().collect::<Option<Vec<_>>>()
            });
            let bottleneck = ck.uint(m, "bottleneck_channels", path, 1, MAX_CHANNELS as u64);
            let per_branch = ck.uint(m, "out_channels_per_branch", path, 1, MAX_CHANNELS as u64);
            let residual = ck.boolean(m, "residual", path);
            let norm = norm_field(m, path, ck);
            let activation = act_field(m, path, ck);
            let dropout = ck.number(m, "dropout", path, 0.0, MAX_DROPOUT);
            let block = InceptionBlock {
                branch_kernels: kernels?,
                bottleneck_channels: bottleneck? as usize,
                out_channels_per_branch: per_branch? as usize,
                residual: residual?,
                norm: norm?,
                activation: activation?,
                dropout: dropout?,
            };
            if block.out_channels() > MAX_CHANNELS {
                ck.reject(
                    join(path, "out_channels_per_branch"),
                    format!("total channels must be in [1, {MAX_CHANNELS}]"),
                );
                return None;
            }
            Some(BlockSpec::Inception(block))
        }
        "flatten" => {
            ck.unknown_fields(m, &["kind"], path);
            Some(BlockSpec::Flatten)
        }
        other => {
            ck.reject(join(path, "kind"), format!("{RULE_UNKNOWN_KIND} `{other}`"));
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn baseline_value() -> Value {
        ArchDescriptor::baseline().to_value()
    }

    #[test]
    fn baseline_round_trips() {
        let d = ArchDescriptor::baseline();
        assert_eq!(parse_descriptor(d.canonical_text().as_bytes()).unwrap(), d);
        let pair = parse_pair(d.model_file().as_bytes(), d.preprocessing_file().as_bytes()).unwrap();
        assert_eq!(pair, d);
    }

    #[test]
    fn even_kernel_is_rejected_at_path() {
        let mut v = baseline_value();
        v["blocks"][1] = json!({"kind":"conv1d","channels":8,"kernel":4,"stride":1,"dilation":1,
            "residual":false,"norm":"batch","activation":"relu","dropout":0.0});
        let err = parse_value(&v).unwrap_err();
        assert!(
            err.0
                .iter()
                .any(|r| r.path == "blocks[1].kernel" && r.rule == RULE_KERNEL_ODD),
            "{err}"
        );
    }

    #[test]
    fn empty_blocks_rejected() {
        let mut v = baseline_value();
        v["blocks"] = json!([]);
        let err = parse_value(&v).unwrap_err();
        assert!(err.0.iter().any(|r| r.rule == RULE_AT_LEAST_ONE_BLOCK));
    }

    #[test]
    fn unknown_kind_and_field_and_version() {
        let mut v = baseline_value();
        v["blocks"][0]["kind"] = json!("lstm");
        v["extra"] = json!(1);
        v["schema_version"] = json!(2);
        let err = parse_value(&v).unwrap_err();
        assert!(err
            .0
            .iter()
            .any(|r| r.path == "blocks[0].kind" && r.rule.starts_with(RULE_UNKNOWN_KIND)));
        assert!(err.0.iter().any(|r| r.path == "extra"));
        assert!(err.0.iter().any(|r| r.path == "schema_version"));
    }

    #[test]
    fn out_of_range_dropout() {
        let mut v = baseline_value();
        v["head"]["dropout"] = json!(1.3);
        let err = parse_value(&v).unwrap_err();
        assert_eq!(err.0[0].path, "head.dropout");
    }

    #[test]
    fn flatten_must_be_last() {
        let mut v = ArchDescriptor::dense_only().to_value();
        v["blocks"] = json!([{"kind":"flatten"},{"kind":"flatten"}]);
        assert!(parse_value(&v).unwrap_err().mentions("blocks[0]"));
    }

    #[test]
    fn hash_ignores_key_order_and_number_format() {
        let d = ArchDescriptor::baseline();
        let text = r#"{"output":1,"head":{"dropout":2e-1,"pooling":"global-average"},
            "blocks":[
              {"residual":true,"kind":"inception","branch_kernels":[9,19,39],"bottleneck_channels":32,
               "out_channels_per_branch":32,"norm":"batch","activation":"gelu","dropout":0.20},
              {"kind":"inception","branch_kernels":[9,19,39],"bottleneck_channels":32,
               "out_channels_per_branch":32,"residual":true,"norm":"batch","activation":"gelu","dropout":0.2}],
            "stem":{"kernel":7,"channels":32,"activation":"gelu","norm":"batch"},
            "preprocessing":[{"kind":"zscore-per-channel"}],"schema_version":1}"#;
        let reordered = parse_descriptor(text.as_bytes()).unwrap();
        assert_eq!(reordered.canonical_hash(), d.canonical_hash());
        let mut changed = d.clone();
        changed.head.dropout = 0.3;
        assert_ne!(changed.canonical_hash(), d.canonical_hash());
    }

    #[test]
    fn pair_versions_must_agree() {
        let d = ArchDescriptor::baseline();
        let err = parse_pair(d.model_file().as_bytes(), br#"{"schema_version":2,"steps":[]}"#).unwrap_err();
        assert!(err.mentions("preprocessing.schema_version"));
    }
}
