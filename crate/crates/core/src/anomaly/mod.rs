//! Latent-space anomaly detectors. Every detector reports scores where a
//! larger value means more anomalous.

mod iforest;
mod lof;

pub use iforest::{average_path_length, IsolationForest};
pub use lof::LocalOutlierFactor;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_TREES: usize = 100;
pub const DEFAULT_SUBSAMPLE: usize = 256;
pub const DEFAULT_LOF_NEIGHBORS: usize = 20;
/// Share of points flagged when a hard anomaly set is needed.
pub const DEFAULT_FLAG_FRACTION: f64 = 0.02;
/// Points highlighted in the anomaly scatter plot.
pub const HIGHLIGHT_COUNT: usize = 15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "detector", rename_all = "snake_case")]
pub enum DetectorConfig {
    IsolationForest { n_trees: usize, subsample: usize, seed: u64 },
    Lof { k_neighbors: usize },
}

impl DetectorConfig {
    pub fn id(&self) -> &'static str {
        match self {
            DetectorConfig::IsolationForest { .. } => "isolation_forest",
            DetectorConfig::Lof { .. } => "lof",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScores {
    pub scores: Vec<f64>,
    pub config: DetectorConfig,
}

impl AnomalyScores {
    fn new(scores: Vec<f64>, config: DetectorConfig) -> Result<Self> {
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("{} produced score {bad}", config.id())));
        }
        Ok(Self { scores, config })
    }

    pub fn detector(&self) -> &'static str {
        self.config.id()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Fitted detector able to score points outside its training set.
#[derive(Clone, Debug)]
pub enum FittedDetector {
    IsolationForest(IsolationForest),
    Lof(LocalOutlierFactor),
}

impl FittedDetector {
    pub fn fit(points: &Tensor, config: &DetectorConfig) -> Result<Self> {
        Ok(match *config {
            DetectorConfig::IsolationForest { n_trees, subsample, seed } => {
                FittedDetector::IsolationForest(IsolationForest::fit(points, n_trees, subsample, seed)?)
            }
            DetectorConfig::Lof { k_neighbors } => FittedDetector::Lof(LocalOutlierFactor::fit(points, k_neighbors)?),
        })
    }

    pub fn score_point(&self, x: &[f64]) -> f64 {
        match self {
            FittedDetector::IsolationForest(f) => f.score_point(x),
            FittedDetector::Lof(l) => l.score_point(x),
        }
    }
}

pub fn isolation_forest(points: &Tensor, n_trees: usize, subsample: usize, seed: u64) -> Result<AnomalyScores> {
    let forest = IsolationForest::fit(points, n_trees, subsample, seed)?;
    AnomalyScores::new(
        forest.score(points),
        DetectorConfig::IsolationForest {
            n_trees,
            subsample: forest.subsample(),
            seed,
        },
    )
}

pub fn lof(points: &Tensor, k_neighbors: usize) -> Result<AnomalyScores> {
    let model = LocalOutlierFactor::fit(points, k_neighbors)?;
    AnomalyScores::new(model.train_scores().to_vec(), DetectorConfig::Lof { k_neighbors })
}

pub fn detect(points: &Tensor, config: &DetectorConfig) -> Result<AnomalyScores> {
    match *config {
        DetectorConfig::IsolationForest { n_trees, subsample, seed } => isolation_forest(points, n_trees, subsample, seed),
        DetectorConfig::Lof { k_neighbors } => lof(points, k_neighbors),
    }
}

/// Indices of the `count` largest scores, largest first, ties by index.
pub fn top_anomalies(scores: &AnomalyScores, count: usize) -> Vec<usize> {
    top_indices(&scores.scores, count)
}

pub(crate) fn top_indices(scores: &[f64], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(count.min(scores.len()));
    idx
}

/// Number of points flagged for a given share of `n`, rounded to nearest.
pub fn flag_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).min(n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Misclassification {
    /// Ascending point indices whose label differs from their cluster majority.
    pub flagged: Vec<usize>,
    /// Majority class of each cluster; `None` for empty clusters.
    pub majority: Vec<Option<usize>>,
}

pub fn misclassification_detector(assignment: &ClusterAssignment, class_labels: &[usize]) -> Result<Misclassification> {
    let clusters = &assignment.assignment;
    if clusters.len() != class_labels.len() {
        return Err(Error::contract(format!(
            "{} cluster indices vs {} labels",
            clusters.len(),
            class_labels.len()
        )));
    }
    let n_classes = class_labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0usize; n_classes]; assignment.k];
    for (&k, &c) in clusters.iter().zip(class_labels) {
        counts[k][c] += 1;
    }
    let majority: Vec<Option<usize>> = counts
        .iter()
        .map(|row| {
            let best = row.iter().copied().max().unwrap_or(0);
            (best > 0).then(|| row.iter().position(|&c| c == best).unwrap())
        })
        .collect();
    let flagged = clusters
        .iter()
        .zip(class_labels)
        .enumerate()
        .filter(|(_, (&k, &c))| majority[k] != Some(c))
        .map(|(i, _)| i)
        .collect();
    Ok(Misclassification { flagged, majority })
}
