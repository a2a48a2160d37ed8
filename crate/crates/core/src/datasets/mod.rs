//! Labeled feature matrices: MNIST IDX files, tabular CSV, seeded synthetic
//! Gaussian mixtures, and stratified train/test splitting.

mod idx;
mod split;
mod synthetic;
mod tabular;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngState, Tensor};

pub use idx::{load_idx, read_idx, write_idx, IdxArray, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use split::{split, split_indices};
pub use synthetic::{make_synthetic_gmm, MixtureDensity, SyntheticSpec};
pub use tabular::{
    load_tabular_csv, synthetic_trading_csv, transform_tabular_csv, ColumnSpec, ColumnType,
    TabularEncoder, TabularSchema,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMeta {
    Numeric { name: String },
    OneHot { group: String, level: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    features: Tensor,
    labels: Vec<usize>,
    class_count: usize,
    feature_meta: Vec<FeatureMeta>,
    /// Display name of each class index, in label order.
    class_names: Vec<String>,
    pub id: String,
}

impl LabeledDataset {
    pub fn new(
        features: Tensor,
        labels: Vec<usize>,
        class_names: Vec<String>,
        feature_meta: Vec<FeatureMeta>,
        id: impl Into<String>,
    ) -> Result<Self> {
        let class_count = class_names.len();
        if features.rows() != labels.len() {
            return Err(Error::contract(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if feature_meta.len() != features.cols() {
            return Err(Error::contract(format!(
                "{} feature descriptors for {} columns",
                feature_meta.len(),
                features.cols()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::contract(format!(
                "label {bad} outside [0, {class_count})"
            )));
        }
        if !features.is_finite() {
            return Err(Error::contract("features contain non-finite values"));
        }
        Ok(Self {
            features,
            labels,
            class_count,
            feature_meta,
            class_names,
            id: id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn feature_meta(&self) -> &[FeatureMeta] {
        &self.feature_meta
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows `indices` as a new dataset with the same class set.
    pub fn subset(&self, indices: &[usize], id: impl Into<String>) -> Self {
        Self {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            feature_meta: self.feature_meta.clone(),
            class_names: self.class_names.clone(),
            id: id.into(),
        }
    }

    /// Seeded stratified subsample of at most `limit` rows.
    pub fn limit(&self, limit: usize, seed: u64) -> Self {
        if limit >= self.len() {
            return self.clone();
        }
        let fraction = limit as f64 / self.len() as f64;
        let (_, mut keep) = split_indices(&self.labels, self.class_count, 1.0 - fraction, seed)
            .expect("fraction in (0, 1)");
        if keep.len() > limit {
            let mut rng = RngState::new(seed);
            rng.shuffle(&mut keep);
            keep.truncate(limit);
            keep.sort_unstable();
        }
        self.subset(&keep, format!("{}[{limit}]", self.id))
    }

    /// Same rows with the labels replaced, e.g. to plant label noise.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Self::new(
            self.features.clone(),
            labels,
            self.class_names.clone(),
            self.feature_meta.clone(),
            self.id.clone(),
        )
    }

    /// Errors unless every class has at least one member.
    pub fn require_all_classes(&self) -> Result<()> {
        let counts = self.class_counts();
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Config(format!(
                "class {missing} ({}) has no members in {}",
                self.class_names[missing], self.id
            )));
        }
        Ok(())
    }
}

pub(crate) fn numeric_meta(prefix: &str, dim: usize) -> Vec<FeatureMeta> {
    (0..dim)
        .map(|i| FeatureMeta::Numeric {
            name: format!("{prefix}{i}"),
        })
        .collect()
}
