//! Brute-force reference implementations, written from the definitions and
//! sharing no code with the library.

/// AUC as the fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half. O(n²).
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut pairs = 0u64;
    let mut twice_wins = 0u64;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1;
            twice_wins += if si > sj {
                2
            } else if si == sj {
                1
            } else {
                0
            };
        }
    }
    (pairs > 0).then(|| twice_wins as f64 / (2 * pairs) as f64)
}

fn counts(probs: &[f64], labels: &[u8], threshold: f64) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    (tp, fp, tn, fn_)
}

/// `2tp / (2tp + fp + fn)`, the harmonic mean of precision and recall in
/// exact rational form; 0 when there are no positives either way.
pub fn f1(probs: &[f64], labels: &[u8], threshold: f64) -> f64 {
    let (tp, fp, _, fn_) = counts(probs, labels, threshold);
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Mean of the defined rates among TPR and TNR.
pub fn balanced_accuracy(probs: &[f64], labels: &[u8], threshold: f64) -> f64 {
    let (tp, fp, tn, fn_) = counts(probs, labels, threshold);
    let mut rates = Vec::new();
    if tp + fn_ > 0 {
        rates.push(tp as f64 / (tp + fn_) as f64);
    }
    if tn + fp > 0 {
        rates.push(tn as f64 / (tn + fp) as f64);
    }
    rates.iter().sum::<f64>() / rates.len() as f64
}

/// Unweighted mean over all `classes` of one-vs-rest F1 on hard labels.
pub fn macro_f1(preds: &[usize], labels: &[usize], classes: usize) -> f64 {
    let mut sum = 0.0;
    for c in 0..classes {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for i in 0..preds.len() {
            match (preds[i] == c, labels[i] == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let denom = 2 * tp + fp + fn_;
        sum += if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        };
    }
    sum / classes as f64
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / preds.len() as f64
}

/// Spectral power (naive DFT) in each bin `1..=T/2`, summed over channels.
/// `series` is `[T, channels]` row-major.
pub fn band_power(series: &[f64], t: usize, channels: usize) -> Vec<f64> {
    let bins = t / 2;
    let mut out = vec![0.0; bins];
    for ch in 0..channels {
        for (k, slot) in out.iter_mut().enumerate() {
            let f = (k + 1) as f64;
            let (mut re, mut im) = (0.0, 0.0);
            for ti in 0..t {
                let a = 2.0 * std::f64::consts::PI * f * ti as f64 / t as f64;
                let x = series[ti * channels + ch];
                re += x * a.cos();
                im -= x * a.sin();
            }
            *slot += re * re + im * im;
        }
    }
    out
}

/// Nearest-centroid accuracy on log band power, fitted on `train` and
/// scored on `test`. Stands in for "how separable is this modality".
pub fn band_power_accuracy(
    features: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    train: &[usize],
    test: &[usize],
) -> f64 {
    let dim = features[0].len();
    let log = |v: &Vec<f64>| v.iter().map(|x| (x + 1e-9).ln()).collect::<Vec<f64>>();
    let mut centroids = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for &i in train {
        for (c, x) in centroids[labels[i]].iter_mut().zip(log(&features[i])) {
            *c += x;
        }
        counts[labels[i]] += 1;
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= (*n).max(1) as f64);
    }
    let hits = test
        .iter()
        .filter(|&&i| {
            let x = log(&features[i]);
            let pred = (0..classes)
                .min_by(|&a, &b| {
                    let da: f64 = centroids[a].iter().zip(&x).map(|(c, v)| (c - v).powi(2)).sum();
                    let db: f64 = centroids[b].iter().zip(&x).map(|(c, v)| (c - v).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            pred == labels[i]
        })
        .count();
    hits as f64 / test.len() as f64
}
