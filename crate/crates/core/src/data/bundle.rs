use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DataError;

/// Partition of raw variate indices into modalities.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalitySpec(pub Vec<Vec<usize>>);

impl ModalitySpec {
    /// One modality holding every variate.
    pub fn single(d: usize) -> Self {
        Self(vec![(0..d).collect()])
    }

    /// `m` consecutive groups of `d` variates.
    pub fn contiguous(m: usize, d: usize) -> Self {
        Self((0..m).map(|k| (k * d..(k + 1) * d).collect()).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn width(&self, m: usize) -> usize {
        self.0[m].len()
    }

    pub fn validate(&self, variates: usize) -> Result<(), DataError> {
        if self.0.is_empty() || self.0.iter().any(Vec::is_empty) {
            return Err(DataError::Modality("every modality needs at least one variate".into()));
        }
        let mut seen = vec![false; variates];
        for group in &self.0 {
            for &v in group {
                if v >= variates {
                    return Err(DataError::Modality(format!(
                        "variate {v} out of range (d = {variates})"
                    )));
                }
                if seen[v] {
                    return Err(DataError::Modality(format!(
                        "variate {v} appears in more than one modality"
                    )));
                }
                seen[v] = true;
            }
        }
        if let Some(v) = seen.iter().position(|s| !s) {
            return Err(DataError::Modality(format!(
                "variate {v} is not assigned to a modality"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Fixed split assignment. Reads of the test indices are counted so a run
/// can prove the test split was touched exactly once.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    test: Vec<usize>,
    #[serde(skip)]
    test_reads: Arc<AtomicUsize>,
}

impl PartialEq for Splits {
    fn eq(&self, other: &Self) -> bool {
        self.train == other.train && self.validation == other.validation && self.test == other.test
    }
}

impl Splits {
    pub fn new(train: Vec<usize>, validation: Vec<usize>, test: Vec<usize>) -> Self {
        Self {
            train,
            validation,
            test,
            test_reads: Arc::default(),
        }
    }

    /// Test indices; every call is recorded.
    pub fn test(&self) -> &[usize] {
        self.test_reads.fetch_add(1, Ordering::SeqCst);
        &self.test
    }

    pub fn test_len(&self) -> usize {
        self.test.len()
    }

    pub fn test_reads(&self) -> usize {
        self.test_reads.load(Ordering::SeqCst)
    }

    pub fn rows(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => self.test(),
        }
    }

    /// Split of every sample.
    pub fn assignment(&self, n: usize) -> Vec<Option<Split>> {
        let mut out = vec![None; n];
        for &i in &self.train {
            out[i] = Some(Split::Train);
        }
        for &i in &self.validation {
            out[i] = Some(Split::Validation);
        }
        for &i in &self.test {
            out[i] = Some(Split::Test);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    File { sha256: String },
    Synthetic { seed: u64, recipe: String },
}

/// Equal-length multivariate samples with class labels, a modality
/// partition and (once [`apply_splits`] has run) a fixed split assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub name: String,
    pub series_len: usize,
    pub variates: usize,
    /// `[n, T, d]` row-major.
    pub values: Vec<f64>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub modalities: ModalitySpec,
    pub splits: Option<Splits>,
    pub provenance: Provenance,
}

impl DatasetBundle {
    pub fn new(
        name: impl Into<String>,
        series_len: usize,
        variates: usize,
        values: Vec<f64>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        provenance: Provenance,
    ) -> Result<Self, DataError> {
        let n = labels.len();
        if n == 0 || series_len == 0 || variates == 0 {
            return Err(DataError::Shape(
                "bundle needs at least one sample, step and variate".into(),
            ));
        }
        if values.len() != n * series_len * variates {
            return Err(DataError::Shape(format!(
                "{} values for {n} samples of [{series_len}, {variates}]",
                values.len()
            )));
        }
        if class_names.len() < 2 {
            return Err(DataError::Shape("at least two classes required".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_names.len()) {
            return Err(DataError::Shape(format!("label {bad} out of range")));
        }
        Ok(Self {
            name: name.into(),
            series_len,
            variates,
            values,
            labels,
            class_names,
            modalities: ModalitySpec::single(variates),
            splits: None,
            provenance,
        })
    }

    pub fn from_ts(data: &super::TsData, source: &[u8]) -> Result<Self, DataError> {
        if data.declared_labels.is_none() {
            return Err(DataError::Shape("unlabelled file".into()));
        }
        Self::new(
            data.problem_name.clone(),
            data.series_len,
            data.dimensions,
            data.to_values(),
            data.labels.clone(),
            data.label_names.clone(),
            Provenance::File {
                sha256: hex::encode(Sha256::digest(source)),
            },
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn with_modalities(mut self, spec: ModalitySpec) -> Result<Self, DataError> {
        spec.validate(self.variates)?;
        self.modalities = spec;
        Ok(self)
    }

    pub fn splits(&self) -> Result<&Splits, DataError> {
        self.splits.as_ref().ok_or(DataError::NoSplits)
    }

    /// Shape `[T, d_m]` of modality `m`.
    pub fn modality_shape(&self, m: usize) -> [usize; 2] {
        [self.series_len, self.modalities.width(m)]
    }

    /// Modality `m` of every sample as `[n, T, d_m]`.
    pub fn modality_values(&self, m: usize) -> Vec<f64> {
        let group = &self.modalities.0[m];
        let (t, d) = (self.series_len, self.variates);
        let mut out = Vec::with_capacity(self.len() * t * group.len());
        for i in 0..self.len() {
            for ti in 0..t {
                let row = &self.values[(i * t + ti) * d..(i * t + ti + 1) * d];
                out.extend(group.iter().map(|&v| row[v]));
            }
        }
        out
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serializes")
    }

    /// Writes `bundle-<hash>.json` into `dir` (no-op if present).
    pub fn cache(&self, dir: &Path) -> Result<PathBuf, DataError> {
        let path = dir.join(format!("bundle-{}.json", self.content_hash()));
        if !path.exists() {
            std::fs::create_dir_all(dir)?;
            crate::protocol::atomic_write(&path, self.to_json().as_bytes())?;
        }
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| DataError::Shape(format!("{}: {e}", path.display())))
    }
}

/// Stratified assignment: inside each class the shuffled samples are cut at
/// `round(n_c * f_train)` and `round(n_c * (f_train + f_val))`.
pub fn apply_splits(mut bundle: DatasetBundle, fractions: [f64; 3], seed: u64) -> Result<DatasetBundle, DataError> {
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
        return Err(DataError::Split(format!(
            "fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..bundle.n_classes() {
        let mut idx: Vec<usize> = (0..bundle.len()).filter(|&i| bundle.labels[i] == c).collect();
        if idx.len() < 3 {
            return Err(DataError::Split(format!(
                "class `{}` has {} samples, fewer than the 3 splits",
                bundle.class_names[c],
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let a = ((n * fractions[0]).round() as usize).clamp(1, idx.len() - 2);
        let b = ((n * (fractions[0] + fractions[1])).round() as usize).clamp(a + 1, idx.len() - 1);
        train.extend_from_slice(&idx[..a]);
        val.extend_from_slice(&idx[a..b]);
        test.extend_from_slice(&idx[b..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    bundle.splits = Some(Splits::new(train, val, test));
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bundle(labels: Vec<usize>, classes: usize) -> DatasetBundle {
        let n = labels.len();
        DatasetBundle::new(
            "t",
            2,
            1,
            (0..2 * n).map(|v| v as f64).collect(),
            labels,
            (0..classes).map(|c| c.to_string()).collect(),
            Provenance::Synthetic {
                seed: 0,
                recipe: "test".into(),
            },
        )
        .unwrap()
    }

    #[test]
    fn three_hundred_split_180_60_60() {
        let b = apply_splits(bundle((0..300).map(|i| i % 3).collect(), 3), [0.6, 0.2, 0.2], 1).unwrap();
        let s = b.splits().unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test_len()), (180, 60, 60));
        assert_eq!(s.test_reads(), 0);
        let _ = s.test();
        assert_eq!(s.test_reads(), 1);
    }

    #[test]
    fn tiny_class_is_rejected() {
        let err = apply_splits(bundle(vec![0, 0, 0, 1, 1], 2), [0.6, 0.2, 0.2], 0).unwrap_err();
        assert!(matches!(err, DataError::Split(_)));
    }

    #[test]
    fn modality_grouping() {
        let spec = ModalitySpec(vec![vec![0, 1, 2], vec![3, 4, 5]]);
        assert!(spec.validate(6).is_ok());
        assert_eq!(ModalitySpec::single(6).len(), 1);
        assert!(ModalitySpec(vec![vec![0], vec![0, 1]]).validate(2).is_err());
        assert!(ModalitySpec(vec![vec![0]]).validate(2).is_err());
    }

    #[test]
    fn modality_view_exposes_only_its_variates() {
        let values: Vec<f64> = (0..12).map(|v| v as f64).collect(); // n=2, T=2, d=3
        let b = DatasetBundle::new(
            "t",
            2,
            3,
            values,
            vec![0, 1],
            vec!["a".into(), "b".into()],
            Provenance::Synthetic {
                seed: 0,
                recipe: String::new(),
            },
        )
        .unwrap()
        .with_modalities(ModalitySpec(vec![vec![1], vec![0, 2]]))
        .unwrap();
        assert_eq!(b.modality_values(0), vec![1.0, 4.0, 7.0, 10.0]);
        assert_eq!(b.modality_values(1), vec![0.0, 2.0, 3.0, 5.0, 6.0, 8.0, 9.0, 11.0]);
    }

    proptest! {
        #[test]
        fn stratification_within_one_sample(labels in proptest::collection::vec(0usize..4, 40..200), seed in any::<u64>()) {
            let counts: Vec<usize> = (0..4).map(|c| labels.iter().filter(|&&y| y == c).count()).collect();
            prop_assume!(counts.iter().all(|&n| n >= 3));
            let b = apply_splits(bundle(labels.clone(), 4), [0.6, 0.2, 0.2], seed).unwrap();
            let s = b.splits().unwrap();
            let test = s.test().to_vec();
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for c in 0..4 {
                let n = counts[c] as f64;
                for (rows, f) in [(&s.train, 0.6), (&s.validation, 0.2), (&test, 0.2)] {
                    let k = rows.iter().filter(|&&i| labels[i] == c).count() as f64;
                    prop_assert!((k - n * f).abs() <= 1.0 + 1e-9, "class {} split {} got {} of {}", c, f, k, n);
                }
            }
            let again = apply_splits(bundle(labels.clone(), 4), [0.6, 0.2, 0.2], seed).unwrap();
            prop_assert_eq!(again.splits, b.splits);
        }
    }
}
