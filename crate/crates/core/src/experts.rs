//! One-vs-rest binary experts over single modalities.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{compile, preprocess, ArchDescriptor, CompileError, DescriptorHash};
use crate::data::DatasetBundle;
use crate::metrics::{binary_metrics, BinaryMetrics};
use crate::nn::{fit, sigmoid, Checkpoint, ComputeGraph, EpochEval, NnError, Param, Tensor, TrainProtocol, Trainable};

pub const CLASS_WEIGHT_RANGE: (f64, f64) = (0.1, 10.0);
pub const THRESHOLD: f64 = 0.5;
const EVAL_BATCH: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertKey {
    pub modality: usize,
    pub class: usize,
}

impl ExpertKey {
    pub fn new(modality: usize, class: usize) -> Self {
        Self { modality, class }
    }

    /// Checkpoint file stem `m<k>_c<j>`.
    pub fn file_stem(&self) -> String {
        format!("m{}_c{}", self.modality, self.class)
    }
}

impl std::fmt::Display for ExpertKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(m={}, c={})", self.modality, self.class)
    }
}

/// `M * C` keys in modality-major order.
pub fn expert_grid(modalities: usize, classes: usize) -> Vec<ExpertKey> {
    (0..modalities)
        .flat_map(|m| (0..classes).map(move |c| ExpertKey::new(m, c)))
        .collect()
}

pub fn one_vs_rest_labels(labels: &[usize], class: usize) -> Vec<u8> {
    labels.iter().map(|&y| u8::from(y == class)).collect()
}

/// `w_pos = n_neg / n_pos` clamped to [0.1, 10]; `None` when either side is
/// empty (degenerate task).
pub fn class_weight(binary: &[u8]) -> Option<f64> {
    let pos = binary.iter().filter(|&&y| y == 1).count();
    let neg = binary.len() - pos;
    (pos > 0 && neg > 0).then(|| (neg as f64 / pos as f64).clamp(CLASS_WEIGHT_RANGE.0, CLASS_WEIGHT_RANGE.1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed,
    SkippedDegenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningCurveSummary {
    pub epochs_run: usize,
    pub train_loss_first: f64,
    pub train_loss_last: f64,
    pub val_loss_min: f64,
    pub val_f1_best: f64,
}

/// Failure reduced to its kind and structural location. Raw messages never
/// leave the executor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedactedFailure {
    pub kind: String,
    pub message: String,
}

impl RedactedFailure {
    pub fn new(kind: &str, location: &str) -> Self {
        Self {
            kind: kind.to_string(),
            message: format!("{kind} at {}", sanitize_location(location)),
        }
    }
}

/// Keeps only layer-name characters so a location can never carry values.
fn sanitize_location(loc: &str) -> String {
    let ok = |c: char| c.is_ascii_lowercase() || c == '_' || c == '.' || c == '[' || c == ']' || c.is_ascii_digit();
    let is_layer = !loc.is_empty() && loc.chars().all(ok) && loc.chars().next().is_some_and(|c| c.is_ascii_lowercase());
    if is_layer {
        loc.to_string()
    } else {
        "unknown".to_string()
    }
}

/// A training error with the raw context the executor saw.
#[derive(Debug, thiserror::Error)]
#[error("{source} ({context})")]
pub struct TrainError {
    pub source: NnError,
    /// May quote data values; see [`TrainError::redact`].
    pub context: String,
}

impl TrainError {
    pub fn redact(&self) -> RedactedFailure {
        RedactedFailure::new(self.source.kind(), self.source.location())
    }
}

/// Modality data after a descriptor's preprocessing, `[n, T', d]`.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub values: Vec<f64>,
    pub t: usize,
    pub d: usize,
}

impl Prepared {
    pub fn new(bundle: &DatasetBundle, modality: usize, desc: &ArchDescriptor) -> Self {
        let raw = bundle.modality_values(modality);
        let [t, d] = bundle.modality_shape(modality);
        let t_out = preprocess::output_len(&desc.preprocessing, t);
        let mut values = Vec::with_capacity(bundle.len() * t_out * d);
        for i in 0..bundle.len() {
            let (x, _) = preprocess::apply(&desc.preprocessing, &raw[i * t * d..(i + 1) * t * d], t, d);
            values.extend_from_slice(&x);
        }
        Self { values, t: t_out, d }
    }

    pub fn batch(&self, rows: &[usize]) -> Tensor {
        let w = self.t * self.d;
        let mut data = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            data.extend_from_slice(&self.values[r * w..(r + 1) * w]);
        }
        Tensor::new(vec![rows.len(), self.t, self.d], data).expect("batch shape")
    }
}

/// A trained binary expert.
#[derive(Clone, Debug)]
pub struct ExpertModel {
    pub key: ExpertKey,
    pub descriptor: ArchDescriptor,
    pub hash: DescriptorHash,
    pub graph: ComputeGraph,
    pub seed: u64,
}

impl ExpertModel {
    /// Width `D` of the penultimate embedding.
    pub fn embed_width(&self) -> usize {
        match self.graph.layers().last() {
            Some(crate::nn::Layer::Dense(d)) => d.in_features,
            _ => 0,
        }
    }

    /// Embeddings of preprocessed samples `[B, T', d]` -> `[B, D]`.
    pub fn embed(&mut self, x: &Tensor) -> Result<Tensor, NnError> {
        self.graph.set_training(false);
        let upto = self.graph.layers().len() - 1;
        self.graph.infer_until(x, upto)
    }

    /// Positive-class probabilities for `[B, T', d]`.
    pub fn predict_prob(&mut self, x: &Tensor) -> Result<Vec<f64>, NnError> {
        self.graph.set_training(false);
        Ok(self.graph.infer(x)?.data().iter().map(|&z| sigmoid(z)).collect())
    }

    /// Embeddings for `rows` of prepared data, `rows.len() * D` values.
    pub fn embed_rows(&mut self, data: &Prepared, rows: &[usize]) -> Result<Vec<f64>, NnError> {
        let mut out = Vec::with_capacity(rows.len() * self.embed_width());
        for chunk in rows.chunks(EVAL_BATCH) {
            out.extend_from_slice(self.embed(&data.batch(chunk))?.data());
        }
        Ok(out)
    }

    pub fn probs_rows(&mut self, data: &Prepared, rows: &[usize]) -> Result<Vec<f64>, NnError> {
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(EVAL_BATCH) {
            out.extend(self.predict_prob(&data.batch(chunk))?);
        }
        Ok(out)
    }

    pub fn checkpoint(&mut self) -> Checkpoint {
        Checkpoint {
            descriptor_hash: self.hash.0.clone(),
            seed: self.seed,
            tensors: self.graph.state_tensors(),
        }
    }

    pub fn from_checkpoint(
        key: ExpertKey,
        descriptor: &ArchDescriptor,
        input_shape: [usize; 2],
        ck: &Checkpoint,
    ) -> Result<Self, CompileError> {
        let hash = descriptor.canonical_hash();
        if hash.0 != ck.descriptor_hash {
            return Err(NnError::Checkpoint("descriptor hash mismatch".into()).into());
        }
        let mut graph = compile(descriptor, input_shape, ck.seed)?;
        graph.load_state_tensors(&ck.tensors)?;
        Ok(Self {
            key,
            descriptor: descriptor.clone(),
            hash,
            graph,
            seed: ck.seed,
        })
    }
}

#[derive(Debug)]
pub struct ExpertOutcome {
    pub key: ExpertKey,
    pub hash: DescriptorHash,
    pub status: TrialStatus,
    pub model: Option<ExpertModel>,
    pub metrics: Option<BinaryMetrics>,
    pub curve: Option<LearningCurveSummary>,
    pub failure: Option<RedactedFailure>,
}

/// Test hook: corrupts one training value so the first forward pass fails.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FaultInjection {
    pub poison_input: bool,
}

struct BinaryTrainer<'a> {
    graph: ComputeGraph,
    data: &'a Prepared,
    targets: &'a [u8],
    train: &'a [usize],
    val: &'a [usize],
    w_pos: f64,
    protocol: &'a TrainProtocol,
}

impl BinaryTrainer<'_> {
    fn loss(&self, p: f64, y: u8) -> (f64, f64) {
        let lg = self.protocol.loss.binary(p, f64::from(y), self.w_pos, 1.0);
        (lg.loss, lg.grad)
    }
}

impl Trainable for BinaryTrainer<'_> {
    fn train_batch(&mut self, rows: &[usize]) -> Result<f64, NnError> {
        let idx: Vec<usize> = rows.iter().map(|&r| self.train[r]).collect();
        self.graph.set_training(true);
        self.graph.zero_grad();
        let z = self.graph.forward(&self.data.batch(&idx))?;
        let b = idx.len() as f64;
        let mut total = 0.0;
        let mut dz = Vec::with_capacity(idx.len());
        for (&zi, &i) in z.data().iter().zip(&idx) {
            let p = sigmoid(zi);
            let (l, g) = self.loss(p, self.targets[i]);
            total += l;
            dz.push(g * p * (1.0 - p) / b);
        }
        self.graph.backward(&Tensor::new(z.shape().to_vec(), dz)?)?;
        Ok(total / b)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.graph.params_mut()
    }

    fn evaluate(&mut self) -> Result<EpochEval, NnError> {
        self.graph.set_training(false);
        let mut probs = Vec::with_capacity(self.val.len());
        for chunk in self.val.chunks(EVAL_BATCH) {
            let z = self.graph.infer(&self.data.batch(chunk))?;
            probs.extend(z.data().iter().map(|&v| sigmoid(v)));
        }
        let labels: Vec<u8> = self.val.iter().map(|&i| self.targets[i]).collect();
        let val_loss = probs.iter().zip(&labels).map(|(&p, &y)| self.loss(p, y).0).sum::<f64>() / probs.len() as f64;
        Ok(EpochEval {
            val_loss,
            score: binary_metrics(&probs, &labels, THRESHOLD).f1,
        })
    }

    fn snapshot(&mut self) -> Vec<f64> {
        self.graph.snapshot()
    }

    fn restore(&mut self, snapshot: &[f64]) {
        self.graph.restore(snapshot)
    }
}

/// Trains expert `key` on the train split with early stopping on the
/// validation split; metrics are computed on the validation split.
pub fn train_expert(
    key: ExpertKey,
    descriptor: &ArchDescriptor,
    bundle: &DatasetBundle,
    protocol: &TrainProtocol,
    seed: u64,
    fault: FaultInjection,
) -> ExpertOutcome {
    let hash = descriptor.canonical_hash();
    let mut out = ExpertOutcome {
        key,
        hash: hash.clone(),
        status: TrialStatus::Failed,
        model: None,
        metrics: None,
        curve: None,
        failure: None,
    };
    let splits = match bundle.splits() {
        Ok(s) => s,
        Err(_) => {
            out.failure = Some(RedactedFailure::new("state_error", "splits"));
            return out;
        }
    };
    let targets = one_vs_rest_labels(&bundle.labels, key.class);
    let train_targets: Vec<u8> = splits.train.iter().map(|&i| targets[i]).collect();
    let Some(w_pos) = class_weight(&train_targets) else {
        out.status = TrialStatus::SkippedDegenerate;
        return out;
    };
    let mut data = Prepared::new(bundle, key.modality, descriptor);
    let graph = match compile(descriptor, bundle.modality_shape(key.modality), seed) {
        Ok(g) => g,
        Err(e) => {
            let kind = match &e {
                CompileError::Nn(n) => n.kind(),
                _ => "invalid_candidate",
            };
            out.failure = Some(RedactedFailure::new(kind, "compile"));
            return out;
        }
    };
    let mut context = String::from("training");
    if fault.poison_input {
        let first = splits.train[0] * data.t * data.d;
        context = format!(
            "sample {} starts with {}",
            splits.train[0],
            bundle.values[splits.train[0] * bundle.series_len * bundle.variates]
        );
        data.values[first] = f64::NAN;
    }
    let mut trainer = BinaryTrainer {
        graph,
        data: &data,
        targets: &targets,
        train: &splits.train,
        val: &splits.validation,
        w_pos,
        protocol,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
    let curve = match fit(&mut trainer, splits.train.len(), protocol, &mut rng) {
        Ok(c) => c,
        Err(source) => {
            let err = TrainError { source, context };
            log::debug!("expert {key} failed: {err}");
            out.failure = Some(err.redact());
            return out;
        }
    };
    let mut model = ExpertModel {
        key,
        descriptor: descriptor.clone(),
        hash,
        graph: trainer.graph,
        seed,
    };
    let probs = match model.probs_rows(&data, &splits.validation) {
        Ok(p) => p,
        Err(source) => {
            out.failure = Some(TrainError { source, context }.redact());
            return out;
        }
    };
    let val_labels: Vec<u8> = splits.validation.iter().map(|&i| targets[i]).collect();
    out.metrics = Some(binary_metrics(&probs, &val_labels, THRESHOLD));
    out.curve = Some(LearningCurveSummary {
        epochs_run: curve.epochs_run(),
        train_loss_first: curve.train_losses[0],
        train_loss_last: *curve.train_losses.last().unwrap(),
        val_loss_min: curve.val_loss_min(),
        val_f1_best: curve.best_score(),
    });
    out.status = TrialStatus::Ok;
    out.model = Some(model);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_vs_rest_examples() {
        assert_eq!(one_vs_rest_labels(&[0, 1, 2, 1], 1), vec![0, 1, 0, 1]);
        assert_eq!(one_vs_rest_labels(&[2, 2], 2), vec![1, 1]);
        assert_eq!(class_weight(&one_vs_rest_labels(&[0, 1], 3)), None);
        assert_eq!(class_weight(&[1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0]), Some(0.1));
        assert_eq!(class_weight(&[1, 0, 0]), Some(2.0));
    }

    #[test]
    fn grid_order_and_size() {
        assert_eq!(expert_grid(3, 5).len(), 15);
        assert_eq!(expert_grid(1, 2).len(), 2);
        let g: Vec<(usize, usize)> = expert_grid(2, 3).iter().map(|k| (k.modality, k.class)).collect();
        assert_eq!(g, [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]);
    }

    #[test]
    fn redaction_keeps_kind_and_layer_only() {
        let err = TrainError {
            source: NnError::NonFinite {
                layer: "blocks[0]".into(),
            },
            context: "value 424242.125".into(),
        };
        let r = err.redact();
        assert_eq!(r.message, "numerical_divergence at blocks[0]");
        assert_eq!(RedactedFailure::new("x", "v=1.5e3").message, "x at unknown");
    }
}
