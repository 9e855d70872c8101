use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::LossKind;
use super::optim::{Adam, AdamConfig};
use super::tensor::Param;
use super::NnError;

/// Training settings shared by every trial of a search run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainProtocol {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-loss improvement before stopping.
    pub patience: usize,
    /// Loss for binary experts. Fusion and end-to-end heads always use
    /// softmax cross-entropy.
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainProtocol {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            loss: LossKind::WeightedBce,
            seed: 0,
        }
    }
}

/// Validation result after one epoch.
#[derive(Clone, Copy, Debug)]
pub struct EpochEval {
    pub val_loss: f64,
    /// Task score tracked for the learning-curve summary (F1 or accuracy).
    pub score: f64,
}

/// A model that can be fitted by [`fit`].
pub trait Trainable {
    /// Zeroes gradients, runs forward/backward over the given training rows
    /// and returns the mean loss.
    fn train_batch(&mut self, rows: &[usize]) -> Result<f64, NnError>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
    fn evaluate(&mut self) -> Result<EpochEval, NnError>;
    fn snapshot(&mut self) -> Vec<f64>;
    fn restore(&mut self, snapshot: &[f64]);
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearningCurve {
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub scores: Vec<f64>,
    pub best_epoch: usize,
}

impl LearningCurve {
    pub fn epochs_run(&self) -> usize {
        self.train_losses.len()
    }

    pub fn val_loss_min(&self) -> f64 {
        self.val_losses.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn best_score(&self) -> f64 {
        self.scores.iter().cloned().fold(0.0, f64::max)
    }
}

/// Mini-batch Adam with early stopping on validation loss. The parameters
/// from the epoch with the lowest validation loss are restored at the end.
pub fn fit<M: Trainable>(
    model: &mut M,
    n_train: usize,
    protocol: &TrainProtocol,
    rng: &mut ChaCha8Rng,
) -> Result<LearningCurve, NnError> {
    let mut adam = Adam::new(protocol.adam);
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut curve = LearningCurve {
        train_losses: Vec::new(),
        val_losses: Vec::new(),
        scores: Vec::new(),
        best_epoch: 0,
    };
    let mut best = model.snapshot();
    let mut best_loss = f64::INFINITY;
    let mut stale = 0;
    let batch = protocol.batch_size.max(1);
    for epoch in 0..protocol.max_epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let loss = model.train_batch(chunk)?;
            if !loss.is_finite() {
                return Err(NnError::NonFinite { layer: "loss".into() });
            }
            total += loss * chunk.len() as f64;
            adam.step(&mut model.params_mut())?;
        }
        curve.train_losses.push(total / n_train.max(1) as f64);
        let eval = model.evaluate()?;
        if !eval.val_loss.is_finite() {
            return Err(NnError::NonFinite {
                layer: "validation_loss".into(),
            });
        }
        curve.val_losses.push(eval.val_loss);
        curve.scores.push(eval.score);
        if eval.val_loss < best_loss {
            best_loss = eval.val_loss;
            best = model.snapshot();
            curve.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= protocol.patience.max(1) {
                break;
            }
        }
    }
    model.restore(&best);
    Ok(curve)
}
