//! Loss functions. Binary losses take a probability and return the loss with
//! its derivative with respect to that probability.

use serde::{Deserialize, Serialize};

use super::layers::softmax_in_place;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    /// dL/dp at the clamped probability.
    pub grad: f64,
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `L = -[w_pos·y·ln p + w_neg·(1-y)·ln(1-p)]`
pub fn weighted_bce(p: f64, y: f64, w_pos: f64, w_neg: f64) -> LossGrad {
    let p = clamp_prob(p);
    LossGrad {
        loss: -(w_pos * y * p.ln() + w_neg * (1.0 - y) * (1.0 - p).ln()),
        grad: -w_pos * y / p + w_neg * (1.0 - y) / (1.0 - p),
    }
}

/// `L = -α·y·(1-p)^γ·ln p - (1-α)·(1-y)·p^γ·ln(1-p)`
pub fn focal(p: f64, y: f64, gamma: f64, alpha: f64) -> LossGrad {
    let p = clamp_prob(p);
    let q = 1.0 - p;
    let pos = alpha * y;
    let neg = (1.0 - alpha) * (1.0 - y);
    let loss = -pos * q.powf(gamma) * p.ln() - neg * p.powf(gamma) * q.ln();
    // d/dp of each term; the gamma factor vanishes for gamma == 0.
    let d_pos = if gamma == 0.0 {
        -1.0 / p
    } else {
        gamma * q.powf(gamma - 1.0) * p.ln() - q.powf(gamma) / p
    };
    let d_neg = if gamma == 0.0 {
        1.0 / q
    } else {
        -gamma * p.powf(gamma - 1.0) * q.ln() + p.powf(gamma) / q
    };
    LossGrad {
        loss,
        grad: pos * d_pos + neg * d_neg,
    }
}

/// Softmax cross-entropy for one row of logits. Returns the loss and the
/// gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let mut probs = logits.to_vec();
    softmax_in_place(&mut probs);
    let loss = -clamp_prob(probs[target]).ln();
    probs[target] -= 1.0;
    (loss, probs)
}

/// Loss selection for a training protocol.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LossKind {
    WeightedBce,
    Focal { gamma: f64, alpha: f64 },
    CrossEntropy,
}

impl LossKind {
    /// Binary loss on probability `p`; cross-entropy degrades to plain BCE.
    pub fn binary(&self, p: f64, y: f64, w_pos: f64, w_neg: f64) -> LossGrad {
        match *self {
            LossKind::WeightedBce => weighted_bce(p, y, w_pos, w_neg),
            LossKind::Focal { gamma, alpha } => focal(p, y, gamma, alpha),
            LossKind::CrossEntropy => weighted_bce(p, y, 1.0, 1.0),
        }
    }
}
