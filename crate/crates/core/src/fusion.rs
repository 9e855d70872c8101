//! Joint embedding assembly, the fusion network and the end-to-end baseline.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{compile, ArchDescriptor, CompileError};
use crate::data::DatasetBundle;
use crate::experts::{ExpertKey, ExpertModel, Prepared};
use crate::metrics::{argmax, multiclass_metrics, MulticlassMetrics};
use crate::nn::layers::{Dense, Dropout, Elementwise};
use crate::nn::{
    fit, softmax_cross_entropy, softmax_in_place, Activation, Checkpoint, ComputeGraph, EpochEval, Layer,
    LearningCurve, NnError, Param, Tensor, TrainProtocol, Trainable,
};

pub const HIDDEN: [usize; 2] = [256, 128];
pub const DROPOUT: f64 = 0.3;
const STD_EPS: f64 = 1e-8;
const EVAL_BATCH: usize = 128;

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("expert {0} missing from the grid")]
    MissingExpert(ExpertKey),
    #[error("expert parameters changed during fusion training")]
    FreezeViolation,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

impl FusionError {
    pub fn kind(&self) -> &'static str {
        match self {
            FusionError::MissingExpert(_) => "missing_expert",
            FusionError::FreezeViolation => "freeze_violation",
            FusionError::Nn(e) => e.kind(),
            FusionError::Compile(_) => "invalid_candidate",
            FusionError::Data(_) => "data_error",
        }
    }
}

/// One cell of the expert grid as seen by fusion.
#[derive(Clone, Debug)]
pub enum ExpertSlot {
    Trained {
        model: ExpertModel,
        data: Arc<Prepared>,
    },
    /// Skipped or failed expert: a zero segment of the declared width.
    Zero {
        width: usize,
    },
}

impl ExpertSlot {
    pub fn width(&self) -> usize {
        match self {
            ExpertSlot::Trained { model, .. } => model.embed_width(),
            ExpertSlot::Zero { width } => *width,
        }
    }
}

/// Segment `(m, c)` of `z` is `[offset, offset + width)`; modality-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointLayout {
    pub segments: Vec<(ExpertKey, usize, usize)>,
    pub total: usize,
}

impl JointLayout {
    pub fn new(widths: &BTreeMap<ExpertKey, usize>, modalities: usize, classes: usize) -> Result<Self, FusionError> {
        let mut segments = Vec::new();
        let mut off = 0;
        for key in crate::experts::expert_grid(modalities, classes) {
            let w = *widths.get(&key).ok_or(FusionError::MissingExpert(key))?;
            segments.push((key, off, w));
            off += w;
        }
        Ok(Self { segments, total: off })
    }
}

/// The full `M x C` grid of experts.
#[derive(Clone, Debug)]
pub struct ExpertSet {
    pub modalities: usize,
    pub classes: usize,
    pub slots: BTreeMap<ExpertKey, ExpertSlot>,
}

impl ExpertSet {
    pub fn new(modalities: usize, classes: usize) -> Self {
        Self {
            modalities,
            classes,
            slots: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: ExpertKey, slot: ExpertSlot) {
        self.slots.insert(key, slot);
    }

    pub fn layout(&self) -> Result<JointLayout, FusionError> {
        let widths = self.slots.iter().map(|(k, s)| (*k, s.width())).collect();
        JointLayout::new(&widths, self.modalities, self.classes)
    }

    /// Joint representations for `rows`, `rows.len() * total` values.
    pub fn build_joint(&mut self, rows: &[usize]) -> Result<(JointLayout, Vec<f64>), FusionError> {
        let layout = self.layout()?;
        let mut z = vec![0.0; rows.len() * layout.total];
        for &(key, off, w) in &layout.segments {
            if let ExpertSlot::Trained { model, data } = self.slots.get_mut(&key).unwrap() {
                let e = model.embed_rows(data, rows)?;
                for r in 0..rows.len() {
                    z[r * layout.total + off..r * layout.total + off + w].copy_from_slice(&e[r * w..(r + 1) * w]);
                }
            }
        }
        Ok((layout, z))
    }

    /// Checksums of every trained expert, in key order.
    pub fn checksums(&mut self) -> Vec<String> {
        self.slots
            .values_mut()
            .filter_map(|s| match s {
                ExpertSlot::Trained { model, .. } => Some(model.graph.checksum()),
                ExpertSlot::Zero { .. } => None,
            })
            .collect()
    }
}

/// Per-dimension z-score fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(z: &[f64], width: usize) -> Self {
        let n = (z.len() / width.max(1)).max(1) as f64;
        let mut mean = vec![0.0; width];
        let mut var = vec![0.0; width];
        for row in z.chunks(width.max(1)) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        for row in z.chunks(width.max(1)) {
            for j in 0..width {
                var[j] += (row[j] - mean[j]).powi(2) / n;
            }
        }
        Self {
            mean,
            sd: var.into_iter().map(f64::sqrt).collect(),
        }
    }

    pub fn apply(&self, z: &mut [f64]) {
        let w = self.mean.len();
        for row in z.chunks_mut(w.max(1)) {
            for j in 0..w {
                row[j] = (row[j] - self.mean[j]) / (self.sd[j] + STD_EPS);
            }
        }
    }
}

fn mlp(input: usize, classes: usize, rng: &mut ChaCha8Rng) -> Vec<Layer> {
    let mut layers = Vec::new();
    let mut w = input;
    for (i, &h) in HIDDEN.iter().enumerate() {
        layers.push(Layer::Dense(Dense::new(format!("fusion.dense[{i}]"), w, h, rng)));
        layers.push(Layer::Activation(Elementwise::new(
            format!("fusion.act[{i}]"),
            Activation::Gelu,
        )));
        layers.push(Layer::Dropout(Dropout::new(format!("fusion.dropout[{i}]"), DROPOUT)));
        w = h;
    }
    layers.push(Layer::Dense(Dense::new("fusion.logits", w, classes, rng)));
    layers
}

/// The trained fusion network `g: z -> logits`.
#[derive(Clone, Debug)]
pub struct FusionModel {
    pub layout: JointLayout,
    pub standardizer: Standardizer,
    pub graph: ComputeGraph,
    pub classes: usize,
    pub seed: u64,
}

/// Class index (ties to the lowest) and softmax probabilities.
pub fn predict_from_logits(logits: &[f64]) -> (usize, Vec<f64>) {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    (argmax(logits), p)
}

impl FusionModel {
    /// Logits for standardized joint rows.
    fn logits(&mut self, z: &[f64]) -> Result<Vec<f64>, NnError> {
        self.graph.set_training(false);
        let n = z.len() / self.layout.total.max(1);
        let mut out = Vec::with_capacity(n * self.classes);
        for chunk in z.chunks(EVAL_BATCH * self.layout.total.max(1)) {
            let b = chunk.len() / self.layout.total.max(1);
            out.extend_from_slice(
                self.graph
                    .infer(&Tensor::new(vec![b, self.layout.total], chunk.to_vec())?)?
                    .data(),
            );
        }
        Ok(out)
    }

    /// Predictions for raw (unstandardized) joint rows.
    pub fn predict(&mut self, z_raw: &[f64]) -> Result<Vec<(usize, Vec<f64>)>, NnError> {
        let mut z = z_raw.to_vec();
        self.standardizer.apply(&mut z);
        let logits = self.logits(&z)?;
        Ok(logits.chunks(self.classes).map(predict_from_logits).collect())
    }

    /// Predicted classes for bundle rows.
    pub fn predict_rows(&mut self, experts: &mut ExpertSet, rows: &[usize]) -> Result<Vec<usize>, FusionError> {
        let (_, z) = experts.build_joint(rows)?;
        Ok(self.predict(&z)?.into_iter().map(|(c, _)| c).collect())
    }

    /// Rebuilds a fusion network saved with [`FusionModel::checkpoint`].
    pub fn from_checkpoint(layout: JointLayout, classes: usize, ck: &Checkpoint) -> Result<Self, NnError> {
        if ck.tensors.len() < 2 || ck.tensors[0].len() != layout.total || ck.tensors[1].len() != layout.total {
            return Err(NnError::Checkpoint(
                "fusion standardizer does not match the joint layout".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(ck.seed);
        let mut graph = ComputeGraph::new(
            vec![layout.total],
            mlp(layout.total, classes, &mut rng),
            ck.seed ^ 0xd1b5_4a32_d192_ed03,
        )?;
        graph.load_state_tensors(&ck.tensors[2..])?;
        Ok(Self {
            standardizer: Standardizer {
                mean: ck.tensors[0].data().to_vec(),
                sd: ck.tensors[1].data().to_vec(),
            },
            layout,
            graph,
            classes,
            seed: ck.seed,
        })
    }

    pub fn checkpoint(&mut self) -> Checkpoint {
        let mut tensors = vec![
            Tensor::from_vec(self.standardizer.mean.clone()),
            Tensor::from_vec(self.standardizer.sd.clone()),
        ];
        tensors.extend(self.graph.state_tensors());
        Checkpoint {
            descriptor_hash: "fusion".into(),
            seed: self.seed,
            tensors,
        }
    }
}

struct MulticlassTrainer<'a> {
    graph: ComputeGraph,
    x_train: &'a [f64],
    y_train: &'a [usize],
    x_val: &'a [f64],
    y_val: &'a [usize],
    width: usize,
    classes: usize,
}

fn ce_batch(logits: &Tensor, targets: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let b = targets.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &y) in logits.data().chunks(classes).zip(targets) {
        let (l, g) = softmax_cross_entropy(row, y);
        total += l;
        grad.extend(g.into_iter().map(|v| v / b));
    }
    (total / b, grad)
}

impl Trainable for MulticlassTrainer<'_> {
    fn train_batch(&mut self, rows: &[usize]) -> Result<f64, NnError> {
        let mut x = Vec::with_capacity(rows.len() * self.width);
        for &r in rows {
            x.extend_from_slice(&self.x_train[r * self.width..(r + 1) * self.width]);
        }
        let y: Vec<usize> = rows.iter().map(|&r| self.y_train[r]).collect();
        self.graph.set_training(true);
        self.graph.zero_grad();
        let logits = self.graph.forward(&Tensor::new(vec![rows.len(), self.width], x)?)?;
        let (loss, grad) = ce_batch(&logits, &y, self.classes);
        self.graph.backward(&Tensor::new(logits.shape().to_vec(), grad)?)?;
        Ok(loss)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.graph.params_mut()
    }

    fn evaluate(&mut self) -> Result<EpochEval, NnError> {
        self.graph.set_training(false);
        let logits = self
            .graph
            .infer(&Tensor::new(vec![self.y_val.len(), self.width], self.x_val.to_vec())?)?;
        let (loss, _) = ce_batch(&logits, self.y_val, self.classes);
        let preds: Vec<usize> = logits.data().chunks(self.classes).map(argmax).collect();
        Ok(EpochEval {
            val_loss: loss,
            score: multiclass_metrics(&preds, self.y_val, self.classes).accuracy,
        })
    }

    fn snapshot(&mut self) -> Vec<f64> {
        self.graph.snapshot()
    }

    fn restore(&mut self, snapshot: &[f64]) {
        self.graph.restore(snapshot)
    }
}

#[derive(Debug)]
pub struct FusionOutcome {
    pub model: FusionModel,
    pub validation: MulticlassMetrics,
    pub curve: LearningCurve,
}

/// Trains the fusion network on frozen experts (train split, early stopping
/// on validation). Expert checksums are compared before and after.
pub fn train_fusion(
    experts: &mut ExpertSet,
    bundle: &DatasetBundle,
    protocol: &TrainProtocol,
    seed: u64,
) -> Result<FusionOutcome, FusionError> {
    let splits = bundle.splits()?;
    let before = experts.checksums();
    let (layout, mut z_train) = experts.build_joint(&splits.train)?;
    let (_, mut z_val) = experts.build_joint(&splits.validation)?;
    let standardizer = Standardizer::fit(&z_train, layout.total);
    standardizer.apply(&mut z_train);
    standardizer.apply(&mut z_val);
    let classes = bundle.n_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graph = ComputeGraph::new(
        vec![layout.total],
        mlp(layout.total, classes, &mut rng),
        seed ^ 0xd1b5_4a32_d192_ed03,
    )?;
    let y_train: Vec<usize> = splits.train.iter().map(|&i| bundle.labels[i]).collect();
    let y_val: Vec<usize> = splits.validation.iter().map(|&i| bundle.labels[i]).collect();
    let mut trainer = MulticlassTrainer {
        graph,
        x_train: &z_train,
        y_train: &y_train,
        x_val: &z_val,
        y_val: &y_val,
        width: layout.total,
        classes,
    };
    let curve = fit(&mut trainer, y_train.len(), protocol, &mut rng)?;
    let mut model = FusionModel {
        layout,
        standardizer,
        graph: trainer.graph,
        classes,
        seed,
    };
    let logits = model.logits(&z_val)?;
    let preds: Vec<usize> = logits.chunks(classes).map(argmax).collect();
    let validation = multiclass_metrics(&preds, &y_val, classes);
    if experts.checksums() != before {
        return Err(FusionError::FreezeViolation);
    }
    Ok(FusionOutcome {
        model,
        validation,
        curve,
    })
}

// ---------------------------------------------------------------------------
// End-to-end baseline

/// One backbone per modality (descriptor without its output layer), channel
/// embeddings concatenated into a single C-way linear head.
#[derive(Clone, Debug)]
pub struct EndToEndModel {
    pub backbones: Vec<ComputeGraph>,
    pub data: Vec<Arc<Prepared>>,
    pub head: ComputeGraph,
    pub widths: Vec<usize>,
    pub classes: usize,
}

impl EndToEndModel {
    pub fn new(desc: &ArchDescriptor, bundle: &DatasetBundle, seed: u64) -> Result<Self, FusionError> {
        let mut backbones = Vec::new();
        let mut widths = Vec::new();
        let mut data = Vec::new();
        for m in 0..bundle.n_modalities() {
            let full = compile(desc, bundle.modality_shape(m), seed.wrapping_add(m as u64))?;
            let n = full.layers().len();
            let body = full.layers()[..n - 1].to_vec();
            let g = ComputeGraph::new(full.input_shape().to_vec(), body, seed.wrapping_add(1000 + m as u64))?;
            widths.push(g.output_shape().iter().product());
            backbones.push(g);
            data.push(Arc::new(Prepared::new(bundle, m, desc)));
        }
        let total: usize = widths.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x2545_f491_4f6c_dd1d);
        let head = ComputeGraph::new(
            vec![total],
            vec![Layer::Dense(Dense::new(
                "head.linear",
                total,
                bundle.n_classes(),
                &mut rng,
            ))],
            seed,
        )?;
        Ok(Self {
            backbones,
            data,
            head,
            widths,
            classes: bundle.n_classes(),
        })
    }

    fn forward(&mut self, rows: &[usize], training: bool) -> Result<Tensor, NnError> {
        let total: usize = self.widths.iter().sum();
        let mut joint = vec![0.0; rows.len() * total];
        let mut off = 0;
        for (m, g) in self.backbones.iter_mut().enumerate() {
            g.set_training(training);
            let x = self.data[m].batch(rows);
            let e = if training { g.forward(&x)? } else { g.infer(&x)? };
            let w = self.widths[m];
            for r in 0..rows.len() {
                joint[r * total + off..r * total + off + w].copy_from_slice(&e.data()[r * w..(r + 1) * w]);
            }
            off += w;
        }
        self.head.set_training(training);
        let z = Tensor::new(vec![rows.len(), total], joint)?;
        if training {
            self.head.forward(&z)
        } else {
            self.head.infer(&z)
        }
    }

    fn backward(&mut self, dlogits: &Tensor) -> Result<(), NnError> {
        let dz = self.head.backward(dlogits)?;
        let total: usize = self.widths.iter().sum();
        let b = dz.shape()[0];
        let mut off = 0;
        for (m, g) in self.backbones.iter_mut().enumerate() {
            let w = self.widths[m];
            let mut part = Vec::with_capacity(b * w);
            for r in 0..b {
                part.extend_from_slice(&dz.data()[r * total + off..r * total + off + w]);
            }
            g.backward(&Tensor::new(vec![b, w], part)?)?;
            off += w;
        }
        Ok(())
    }

    pub fn predict_rows(&mut self, rows: &[usize]) -> Result<Vec<usize>, NnError> {
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(EVAL_BATCH) {
            let logits = self.forward(chunk, false)?;
            out.extend(logits.data().chunks(self.classes).map(argmax));
        }
        Ok(out)
    }

    fn graphs_mut(&mut self) -> impl Iterator<Item = &mut ComputeGraph> {
        self.backbones.iter_mut().chain(std::iter::once(&mut self.head))
    }

    /// Rebuilds a model saved with [`EndToEndModel::checkpoint`].
    pub fn from_checkpoint(
        desc: &ArchDescriptor,
        bundle: &DatasetBundle,
        ck: &Checkpoint,
    ) -> Result<Self, FusionError> {
        if ck.descriptor_hash != desc.canonical_hash().as_str() {
            return Err(NnError::Checkpoint("descriptor hash mismatch".into()).into());
        }
        let mut model = Self::new(desc, bundle, ck.seed)?;
        let mut off = 0;
        for g in model.graphs_mut() {
            let n = g.state_tensors().len();
            let part = ck
                .tensors
                .get(off..off + n)
                .ok_or_else(|| NnError::Checkpoint("too few tensors".into()))?;
            g.load_state_tensors(part)?;
            off += n;
        }
        if off != ck.tensors.len() {
            return Err(NnError::Checkpoint("too many tensors".into()).into());
        }
        Ok(model)
    }

    pub fn checkpoint(&mut self, hash: &str, seed: u64) -> Checkpoint {
        let tensors = self.graphs_mut().flat_map(|g| g.state_tensors()).collect();
        Checkpoint {
            descriptor_hash: hash.to_string(),
            seed,
            tensors,
        }
    }
}

struct EndToEndTrainer<'a> {
    model: EndToEndModel,
    train: &'a [usize],
    val: &'a [usize],
    labels: &'a [usize],
}

impl Trainable for EndToEndTrainer<'_> {
    fn train_batch(&mut self, rows: &[usize]) -> Result<f64, NnError> {
        let idx: Vec<usize> = rows.iter().map(|&r| self.train[r]).collect();
        self.model.graphs_mut().for_each(|g| g.zero_grad());
        let logits = self.model.forward(&idx, true)?;
        let y: Vec<usize> = idx.iter().map(|&i| self.labels[i]).collect();
        let (loss, grad) = ce_batch(&logits, &y, self.model.classes);
        self.model.backward(&Tensor::new(logits.shape().to_vec(), grad)?)?;
        Ok(loss)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.model.graphs_mut().flat_map(|g| g.params_mut()).collect()
    }

    fn evaluate(&mut self) -> Result<EpochEval, NnError> {
        let mut loss = 0.0;
        let mut preds = Vec::with_capacity(self.val.len());
        for chunk in self.val.chunks(EVAL_BATCH) {
            let logits = self.model.forward(chunk, false)?;
            let y: Vec<usize> = chunk.iter().map(|&i| self.labels[i]).collect();
            loss += ce_batch(&logits, &y, self.model.classes).0 * chunk.len() as f64;
            preds.extend(logits.data().chunks(self.model.classes).map(argmax));
        }
        let y: Vec<usize> = self.val.iter().map(|&i| self.labels[i]).collect();
        Ok(EpochEval {
            val_loss: loss / self.val.len() as f64,
            score: multiclass_metrics(&preds, &y, self.model.classes).accuracy,
        })
    }

    fn snapshot(&mut self) -> Vec<f64> {
        self.model.graphs_mut().flat_map(|g| g.snapshot()).collect()
    }

    fn restore(&mut self, snapshot: &[f64]) {
        let mut off = 0;
        for g in self.model.graphs_mut() {
            let n = g.snapshot().len();
            g.restore(&snapshot[off..off + n]);
            off += n;
        }
    }
}

#[derive(Debug)]
pub struct EndToEndOutcome {
    pub model: EndToEndModel,
    pub validation: MulticlassMetrics,
    pub curve: LearningCurve,
}

/// Trains the multiclass baseline with softmax cross-entropy.
pub fn train_end_to_end(
    desc: &ArchDescriptor,
    bundle: &DatasetBundle,
    protocol: &TrainProtocol,
    seed: u64,
) -> Result<EndToEndOutcome, FusionError> {
    let splits = bundle.splits()?;
    let model = EndToEndModel::new(desc, bundle, seed)?;
    let mut trainer = EndToEndTrainer {
        model,
        train: &splits.train,
        val: &splits.validation,
        labels: &bundle.labels,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667_f3bc_c908);
    let curve = fit(&mut trainer, splits.train.len(), protocol, &mut rng)?;
    let mut model = trainer.model;
    let preds = model.predict_rows(&splits.validation)?;
    let y: Vec<usize> = splits.validation.iter().map(|&i| bundle.labels[i]).collect();
    let validation = multiclass_metrics(&preds, &y, bundle.n_classes());
    Ok(EndToEndOutcome {
        model,
        validation,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn widths(pairs: &[((usize, usize), usize)]) -> BTreeMap<ExpertKey, usize> {
        pairs.iter().map(|&((m, c), w)| (ExpertKey::new(m, c), w)).collect()
    }

    #[test]
    fn layout_lengths_and_slices() {
        let all8: Vec<((usize, usize), usize)> = crate::experts::expert_grid(2, 3)
            .iter()
            .map(|k| ((k.modality, k.class), 8))
            .collect();
        assert_eq!(JointLayout::new(&widths(&all8), 2, 3).unwrap().total, 48);
        let l = JointLayout::new(&widths(&[((0, 2), 8), ((0, 0), 4), ((0, 1), 4)]), 1, 3).unwrap();
        let spans: Vec<(usize, usize)> = l.segments.iter().map(|&(_, o, w)| (o, o + w)).collect();
        assert_eq!(spans, [(0, 4), (4, 8), (8, 16)]);
        assert!(matches!(
            JointLayout::new(&widths(&[((0, 0), 4)]), 1, 2),
            Err(FusionError::MissingExpert(_))
        ));
    }

    #[test]
    fn prediction_examples() {
        let (c, p) = predict_from_logits(&[0.0, 0.0, 0.0]);
        assert_eq!(c, 0);
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(predict_from_logits(&[1.0, 3.0, 2.0]).0, 1);
        let (c2, p2) = predict_from_logits(&[101.0, 103.0, 102.0]);
        let (_, p1) = predict_from_logits(&[1.0, 3.0, 2.0]);
        assert_eq!(c2, 1);
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardizer_uses_fit_statistics() {
        let z = vec![1.0, 10.0, 3.0, 10.0];
        let s = Standardizer::fit(&z, 2);
        assert_eq!(s.mean, vec![2.0, 10.0]);
        let mut t = vec![3.0, 10.0];
        s.apply(&mut t);
        assert!((t[0] - 1.0).abs() < 1e-6);
        assert_eq!(t[1], 0.0);
    }
}
