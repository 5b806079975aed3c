//! Dataset loading, synthetic Gaussian blob generation, and forget-split
//! construction for the full-class, subclass, and random scenarios.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Which label column drives training/evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Fine,
    Coarse,
}

/// In-memory dataset: row-major feature matrix plus integer labels.
/// `coarse_labels` is present for subclass scenarios, mirroring a
/// fine-to-coarse class mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub n_features: usize,
    pub fine_labels: Vec<usize>,
    pub coarse_labels: Option<Vec<usize>>,
}

/// Label-free view of the feature matrix. Operations that must not consult
/// labels take this type instead of [`Dataset`].
#[derive(Debug, Clone, Copy)]
pub struct Features<'a> {
    pub data: &'a [f64],
    pub n_features: usize,
}

impl<'a> Features<'a> {
    pub fn n_samples(&self) -> usize {
        self.data.len() / self.n_features
    }

    pub fn sample(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.n_features..(i + 1) * self.n_features]
    }
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.fine_labels.len()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn features_view(&self) -> Features<'_> {
        Features {
            data: &self.features,
            n_features: self.n_features,
        }
    }

    pub fn labels(&self, source: LabelSource) -> &[usize] {
        match source {
            LabelSource::Fine => &self.fine_labels,
            LabelSource::Coarse => self.coarse_labels.as_deref().unwrap_or(&self.fine_labels),
        }
    }

    /// Number of classes under the given label source (max label + 1).
    pub fn n_classes(&self, source: LabelSource) -> usize {
        self.labels(source).iter().max().map_or(0, |m| m + 1)
    }
}

/// Column schema for CSV loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub feature_columns: Vec<String>,
    pub fine_label_column: String,
    #[serde(default)]
    pub coarse_label_column: Option<String>,
}

/// Parse a headered CSV into a dataset, preserving row order.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let headers = reader
        .headers()
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();

    let column_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let feature_idx: Vec<usize> = schema
        .feature_columns
        .iter()
        .map(|c| column_index(c))
        .collect::<Result<_>>()?;
    let fine_idx = column_index(&schema.fine_label_column)?;
    let coarse_idx = schema
        .coarse_label_column
        .as_deref()
        .map(column_index)
        .transpose()?;

    let mut features = Vec::new();
    let mut fine_labels = Vec::new();
    let mut coarse_labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let cell = |idx: usize, column: &str| -> Result<&str> {
            record.get(idx).ok_or_else(|| Error::CsvCell {
                path: path.to_path_buf(),
                row: row + 1,
                column: column.to_string(),
                value: String::from("<missing>"),
            })
        };
        for (&idx, column) in feature_idx.iter().zip(&schema.feature_columns) {
            let raw = cell(idx, column)?;
            let value: f64 = raw.trim().parse().map_err(|_| Error::CsvCell {
                path: path.to_path_buf(),
                row: row + 1,
                column: column.clone(),
                value: raw.to_string(),
            })?;
            features.push(value);
        }
        let raw = cell(fine_idx, &schema.fine_label_column)?;
        let label: usize = raw.trim().parse().map_err(|_| Error::CsvCell {
            path: path.to_path_buf(),
            row: row + 1,
            column: schema.fine_label_column.clone(),
            value: raw.to_string(),
        })?;
        fine_labels.push(label);
        if let Some(idx) = coarse_idx {
            let name = schema.coarse_label_column.as_deref().unwrap();
            let raw = cell(idx, name)?;
            let label: usize = raw.trim().parse().map_err(|_| Error::CsvCell {
                path: path.to_path_buf(),
                row: row + 1,
                column: name.to_string(),
                value: raw.to_string(),
            })?;
            coarse_labels.push(label);
        }
    }
    if fine_labels.is_empty() {
        return Err(Error::EmptyCsv {
            path: path.to_path_buf(),
        });
    }
    Ok(Dataset {
        features,
        n_features: schema.feature_columns.len(),
        fine_labels,
        coarse_labels: if coarse_idx.is_some() {
            Some(coarse_labels)
        } else {
            None
        },
    })
}

/// splitmix64; used so cluster-mean placement is a pure function of the
/// cluster index rather than of the sampling seed, letting train and test
/// sets generated from different seeds share the same means.
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Mean of fine cluster `k`: `separation·k` along axis 0, with deterministic
/// offsets in `[-separation/4, separation/4]` on the remaining axes. Adjacent
/// means differ by at least `separation` along axis 0, so all pairwise
/// distances are >= `separation`.
pub fn cluster_mean(fine_class: usize, n_features: usize, separation: f64) -> Vec<f64> {
    let mut mean = vec![0.0; n_features];
    mean[0] = separation * fine_class as f64;
    for (j, m) in mean.iter_mut().enumerate().skip(1) {
        let h = splitmix64((fine_class as u64) << 32 | j as u64);
        let unit = (h >> 11) as f64 / (1u64 << 53) as f64; // [0,1)
        *m = (unit - 0.5) * separation / 2.0;
    }
    mean
}

/// Unit-variance Gaussian clusters around [`cluster_mean`]s, `n_per_class`
/// samples per fine cluster, deterministic given `seed`. With
/// `subclasses_per_class` set, each coarse class holds that many fine
/// sub-clusters and coarse labels are emitted alongside fine ones.
pub fn synthesize_blobs(
    n_classes: usize,
    n_per_class: usize,
    n_features: usize,
    separation: f64,
    seed: u64,
    subclasses_per_class: Option<usize>,
) -> Dataset {
    assert!(n_classes >= 1 && n_per_class >= 1 && n_features >= 1);
    assert!(separation > 0.0);
    let sub = subclasses_per_class.unwrap_or(1).max(1);
    let n_fine = n_classes * sub;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n_fine * n_per_class * n_features);
    let mut fine_labels = Vec::with_capacity(n_fine * n_per_class);
    let mut coarse_labels = Vec::with_capacity(n_fine * n_per_class);
    // Center the line of means on the origin: uncentered all-positive inputs
    // drive every relu unit dead early in training.
    let shift = separation * (n_fine - 1) as f64 / 2.0;
    for fine in 0..n_fine {
        let mut mean = cluster_mean(fine, n_features, separation);
        mean[0] -= shift;
        for _ in 0..n_per_class {
            for &m in &mean {
                let noise: f64 = StandardNormal.sample(&mut rng);
                features.push(m + noise);
            }
            fine_labels.push(fine);
            coarse_labels.push(fine / sub);
        }
    }
    Dataset {
        features,
        n_features,
        fine_labels,
        coarse_labels: subclasses_per_class.map(|_| coarse_labels),
    }
}

/// Rule that defines the forget set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitRule {
    /// Forget every row of one fine class.
    FullClass { class: usize },
    /// Forget every row of one fine class; training labels stay coarse.
    SubClass { class: usize },
    /// Forget a seeded uniform sample of `round(fraction·n)` rows.
    RandomFraction { fraction: f64, seed: u64 },
}

/// Partition of a dataset into forget and retain indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ForgetSplit {
    pub forget_indices: Vec<usize>,
    pub retain_indices: Vec<usize>,
    pub rule: SplitRule,
}

impl ForgetSplit {
    pub fn n_total(&self) -> usize {
        self.forget_indices.len() + self.retain_indices.len()
    }
}

/// Build the forget/retain partition for a rule. Deterministic given
/// `(dataset, rule)`; both index lists come back sorted and disjoint.
pub fn make_split(dataset: &Dataset, rule: &SplitRule) -> Result<ForgetSplit> {
    let n = dataset.n_samples();
    let forget_indices: Vec<usize> = match rule {
        SplitRule::FullClass { class } | SplitRule::SubClass { class } => {
            let n_fine = dataset.n_classes(LabelSource::Fine);
            if *class >= n_fine {
                return Err(Error::UnknownClass {
                    class: *class,
                    classes: n_fine,
                });
            }
            (0..n).filter(|&i| dataset.fine_labels[i] == *class).collect()
        }
        SplitRule::RandomFraction { fraction, seed } => {
            if !(*fraction > 0.0 && *fraction < 1.0) {
                return Err(Error::FractionOutOfRange(*fraction));
            }
            let count = (fraction * n as f64).round() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng);
            let mut chosen: Vec<usize> = all.into_iter().take(count).collect();
            chosen.sort_unstable();
            chosen
        }
    };
    let mut in_forget = vec![false; n];
    for &i in &forget_indices {
        in_forget[i] = true;
    }
    let retain_indices: Vec<usize> = (0..n).filter(|&i| !in_forget[i]).collect();
    Ok(ForgetSplit {
        forget_indices,
        retain_indices,
        rule: rule.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn schema() -> CsvSchema {
        CsvSchema {
            feature_columns: vec!["f0".into(), "f1".into()],
            fine_label_column: "label".into(),
            coarse_label_column: None,
        }
    }

    fn write_csv(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let mut file = std::fs::File::create(&path).unwrap();
        file.write_all(content.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn loads_three_row_csv() {
        let (_dir, path) = write_csv("f0,f1,label\n1.0,2.0,0\n3.0,4.0,1\n5.5,-1.5,0\n");
        let ds = load_csv(&path, &schema()).unwrap();
        assert_eq!(ds.n_samples(), 3);
        assert_eq!(ds.n_features, 2);
        assert_eq!(ds.sample(2), &[5.5, -1.5]);
        assert_eq!(ds.fine_labels, vec![0, 1, 0]);
    }

    #[test]
    fn missing_label_column_names_the_column() {
        let (_dir, path) = write_csv("f0,f1\n1.0,2.0\n");
        let err = load_csv(&path, &schema()).unwrap_err();
        match err {
            Error::MissingColumn { column, .. } => assert_eq!(column, "label"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let (_dir, path) = write_csv("f0,f1,label\n1.0,2.0,0\nabc,4.0,1\n");
        let err = load_csv(&path, &schema()).unwrap_err();
        match err {
            Error::CsvCell { row, column, value, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "f0");
                assert_eq!(value, "abc");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_csv_is_an_error() {
        let (_dir, path) = write_csv("f0,f1,label\n");
        let err = load_csv(&path, &schema()).unwrap_err();
        assert!(matches!(err, Error::EmptyCsv { .. }));
    }

    #[test]
    fn blobs_have_expected_counts_and_labels() {
        let ds = synthesize_blobs(3, 100, 2, 8.0, 5, None);
        assert_eq!(ds.n_samples(), 300);
        assert_eq!(ds.n_classes(LabelSource::Fine), 3);
        assert!(ds.coarse_labels.is_none());
    }

    #[test]
    fn blobs_are_deterministic() {
        let a = synthesize_blobs(3, 10, 4, 6.0, 123, Some(2));
        let b = synthesize_blobs(3, 10, 4, 6.0, 123, Some(2));
        assert_eq!(a, b);
    }

    #[test]
    fn cluster_means_are_separated() {
        let sep = 5.0;
        for a in 0..6usize {
            for b in 0..a {
                let ma = cluster_mean(a, 3, sep);
                let mb = cluster_mean(b, 3, sep);
                let dist: f64 = ma
                    .iter()
                    .zip(&mb)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                assert!(dist >= sep);
            }
        }
    }

    #[test]
    fn full_class_split_takes_the_whole_class() {
        let ds = synthesize_blobs(3, 100, 2, 8.0, 5, None);
        let split = make_split(&ds, &SplitRule::FullClass { class: 2 }).unwrap();
        assert_eq!(split.forget_indices.len(), 100);
        assert_eq!(split.retain_indices.len(), 200);
    }

    #[test]
    fn random_fraction_split_counts() {
        let ds = synthesize_blobs(1, 100, 2, 8.0, 5, None);
        let rule = SplitRule::RandomFraction {
            fraction: 0.1,
            seed: 9,
        };
        let split = make_split(&ds, &rule).unwrap();
        assert_eq!(split.forget_indices.len(), 10);
        assert_eq!(split.retain_indices.len(), 90);
        for i in &split.forget_indices {
            assert!(!split.retain_indices.contains(i));
        }
    }

    #[test]
    fn subclass_split_keeps_all_coarse_classes_in_retain() {
        let ds = synthesize_blobs(3, 20, 2, 8.0, 5, Some(2));
        let split = make_split(&ds, &SplitRule::SubClass { class: 3 }).unwrap();
        let coarse = ds.coarse_labels.as_ref().unwrap();
        let mut seen = [false; 3];
        for &i in &split.retain_indices {
            seen[coarse[i]] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn unknown_class_is_rejected() {
        let ds = synthesize_blobs(3, 10, 2, 8.0, 5, None);
        let err = make_split(&ds, &SplitRule::FullClass { class: 7 }).unwrap_err();
        assert!(matches!(err, Error::UnknownClass { class: 7, classes: 3 }));
    }

    #[test]
    fn out_of_range_fraction_is_rejected() {
        let ds = synthesize_blobs(3, 10, 2, 8.0, 5, None);
        let rule = SplitRule::RandomFraction {
            fraction: 1.5,
            seed: 0,
        };
        assert!(matches!(
            make_split(&ds, &rule).unwrap_err(),
            Error::FractionOutOfRange(_)
        ));
    }

    proptest! {
        #[test]
        fn split_is_a_partition(fraction in 0.01f64..0.99, seed in any::<u64>(), n_per in 5usize..40) {
            let ds = synthesize_blobs(3, n_per, 2, 8.0, seed, None);
            let rule = SplitRule::RandomFraction { fraction, seed };
            let split = make_split(&ds, &rule).unwrap();
            let mut union: Vec<usize> = split
                .forget_indices
                .iter()
                .chain(&split.retain_indices)
                .cloned()
                .collect();
            union.sort_unstable();
            prop_assert_eq!(union, (0..ds.n_samples()).collect::<Vec<_>>());
        }

        #[test]
        fn split_is_deterministic(seed in any::<u64>()) {
            let ds = synthesize_blobs(2, 15, 2, 8.0, 1, None);
            let rule = SplitRule::RandomFraction { fraction: 0.3, seed };
            let a = make_split(&ds, &rule).unwrap();
            let b = make_split(&ds, &rule).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
