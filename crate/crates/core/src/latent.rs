use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_id: String,
    pub dataset_id: String,
}

/// Deterministic latent embedding of a dataset (posterior means for the
/// variational models, the code layer for the plain autoencoder).
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSet {
    pub points: Tensor,
    pub labels: Vec<usize>,
    pub provenance: Provenance,
}

impl LatentSet {
    pub fn new(points: Tensor, labels: Vec<usize>, provenance: Provenance) -> Result<Self> {
        if points.rows() != labels.len() {
            return Err(Error::contract(format!(
                "{} latent points for {} labels",
                points.rows(),
                labels.len()
            )));
        }
        if !points.is_finite() {
            return Err(Error::Numeric(format!(
                "latent embedding from {} has non-finite entries",
                provenance.model_id
            )));
        }
        Ok(Self {
            points,
            labels,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    /// Mean latent point of each class; `None` for classes without members.
    pub fn class_centroids(&self, class_count: usize) -> Vec<Option<Vec<f64>>> {
        let dim = self.dim();
        let mut sums = vec![vec![0.0; dim]; class_count];
        let mut counts = vec![0usize; class_count];
        for (row, &l) in self.points.row_iter().zip(&self.labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(row) {
                *s += v;
            }
        }
        sums.into_iter()
            .zip(counts)
            .map(|(s, c)| (c > 0).then(|| s.into_iter().map(|v| v / c as f64).collect()))
            .collect()
    }
}
