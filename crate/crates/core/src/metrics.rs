//! Binary and multiclass classification metrics.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinaryMetrics {
    pub f1: f64,
    /// Absent when the labels contain a single class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    pub balanced_accuracy: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub prevalence: f64,
}

/// F1 is `2tp / (2tp + fp + fn)` (0 when undefined). AUC is the rank
/// statistic with average ranks for ties. Balanced accuracy averages the
/// defined rates among TPR and TNR.
///
/// # Panics
/// If the inputs are empty or differ in length.
pub fn binary_metrics(probs: &[f64], labels: &[u8], threshold: f64) -> BinaryMetrics {
    assert!(!probs.is_empty() && probs.len() == labels.len(), "probs/labels length");
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let denom = 2 * tp + fp + fn_;
    let f1 = if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    };
    let mut rates = Vec::with_capacity(2);
    if tp + fn_ > 0 {
        rates.push(tp as f64 / (tp + fn_) as f64);
    }
    if tn + fp > 0 {
        rates.push(tn as f64 / (tn + fp) as f64);
    }
    let balanced_accuracy = rates.iter().sum::<f64>() / rates.len() as f64;
    BinaryMetrics {
        f1,
        auc: auc(probs, labels),
        balanced_accuracy,
        tp,
        fp,
        tn,
        fn_,
        prevalence: (tp + fn_) as f64 / probs.len() as f64,
    }
}

fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 1-based average ranks over positives, doubled to stay integral.
    let mut rank2_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg2 = (i + 1 + j + 1) as u64;
        let pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        rank2_sum += avg2 * pos;
        i = j + 1;
    }
    let (np, nn) = (n_pos as u64, n_neg as u64);
    let u2 = rank2_sum - np * (np + 1);
    Some(u2 as f64 / (2 * np * nn) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MulticlassMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    /// Classes with no true samples (their F1 still counts as 0 in the mean).
    pub absent_classes: Vec<usize>,
    /// `confusion[true][pred]`
    pub confusion: Vec<Vec<u64>>,
}

/// # Panics
/// If lengths differ or an index is `>= classes`.
pub fn multiclass_metrics(preds: &[usize], labels: &[usize], classes: usize) -> MulticlassMetrics {
    assert_eq!(preds.len(), labels.len(), "preds/labels length");
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (&p, &y) in preds.iter().zip(labels) {
        confusion[y][p] += 1;
    }
    let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
    let accuracy = if preds.is_empty() {
        0.0
    } else {
        correct as f64 / preds.len() as f64
    };
    let mut per_class_f1 = Vec::with_capacity(classes);
    let mut absent_classes = Vec::new();
    for c in 0..classes {
        let tp = confusion[c][c];
        let support: u64 = confusion[c].iter().sum();
        let predicted: u64 = (0..classes).map(|r| confusion[r][c]).sum();
        if support == 0 {
            absent_classes.push(c);
        }
        let denom = support + predicted;
        per_class_f1.push(if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        });
    }
    let macro_f1 = per_class_f1.iter().sum::<f64>() / classes as f64;
    MulticlassMetrics {
        accuracy,
        macro_f1,
        per_class_f1,
        absent_classes,
        confusion,
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_half() {
        let m = binary_metrics(&[0.9, 0.9, 0.1, 0.1], &[1, 0, 1, 0], 0.5);
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (1, 1, 1, 1));
        assert_eq!(m.f1, 0.5);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(binary_metrics(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1], 0.5).auc, Some(1.0));
        assert_eq!(
            binary_metrics(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1], 0.5).auc,
            Some(0.75)
        );
        assert_eq!(binary_metrics(&[0.5, 0.5], &[1, 1], 0.5).auc, None);
        assert_eq!(binary_metrics(&[0.5, 0.5], &[0, 1], 0.5).auc, Some(0.5));
    }

    #[test]
    fn multiclass_examples() {
        let m = multiclass_metrics(&[0, 1, 2], &[0, 1, 2], 3);
        assert_eq!((m.accuracy, m.macro_f1), (1.0, 1.0));
        let m = multiclass_metrics(&[0; 6], &[0, 1, 2, 0, 1, 2], 3);
        assert!((m.accuracy - 1.0 / 3.0).abs() < 1e-15);
        let m = multiclass_metrics(&[0, 0], &[0, 0], 3);
        assert_eq!(m.absent_classes, vec![1, 2]);
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 2.0]), 1);
    }
}
