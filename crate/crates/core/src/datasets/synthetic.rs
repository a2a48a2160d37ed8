//! Isotropic Gaussian mixtures with a known density, used as ground truth.

use serde::{Deserialize, Serialize};

use super::{numeric_meta, LabeledDataset};
use crate::error::{Error, Result};
use crate::numerics::{RngState, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// One mean per component, all of the same dimension.
    pub means: Vec<Vec<f64>>,
    /// Per-component standard deviation (isotropic).
    pub scales: Vec<f64>,
    pub counts: Vec<usize>,
}

impl SyntheticSpec {
    /// `classes` components spaced `spacing` apart along a circle in the first
    /// two axes of a `dim`-dimensional space.
    pub fn ring(classes: usize, dim: usize, per_class: usize, spacing: f64, scale: f64) -> Self {
        assert!(dim >= 2 && classes >= 1);
        let radius = if classes == 1 {
            0.0
        } else {
            spacing / (2.0 * (std::f64::consts::PI / classes as f64).sin())
        };
        let means = (0..classes)
            .map(|c| {
                let angle = std::f64::consts::TAU * c as f64 / classes as f64;
                let mut m = vec![0.0; dim];
                m[0] = radius * angle.cos();
                m[1] = radius * angle.sin();
                m
            })
            .collect();
        Self {
            means,
            scales: vec![scale; classes],
            counts: vec![per_class; classes],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.means.len();
        if k == 0 || self.scales.len() != k || self.counts.len() != k {
            return Err(Error::Config(
                "synthetic spec needs equal, non-zero numbers of means, scales and counts".into(),
            ));
        }
        let dim = self.means[0].len();
        if dim == 0 || self.means.iter().any(|m| m.len() != dim) {
            return Err(Error::Config("synthetic means must share a positive dimension".into()));
        }
        if self.scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config("synthetic scales must be positive".into()));
        }
        if self.counts.iter().any(|&c| c == 0) {
            return Err(Error::Config("synthetic counts must be positive".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// `f(x) = sum_y w_y N(x; mean_y, scale_y^2 I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureDensity {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
}

impl MixtureDensity {
    pub fn from_spec(spec: &SyntheticSpec) -> Self {
        let n = spec.total() as f64;
        Self {
            weights: spec.counts.iter().map(|&c| c as f64 / n).collect(),
            means: spec.means.clone(),
            scales: spec.scales.clone(),
        }
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        let d = x.len() as f64;
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.scales)
            .map(|((w, m), s)| {
                let sq: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                let var = s * s;
                w * (-0.5 * sq / var).exp() / (std::f64::consts::TAU * var).powf(d / 2.0)
            })
            .sum()
    }
}

/// Samples each component's points in order (all of class 0, then class 1,
/// ...) and returns the exact mixture density alongside.
pub fn make_synthetic_gmm(spec: &SyntheticSpec, seed: u64) -> Result<(LabeledDataset, MixtureDensity)> {
    spec.validate()?;
    let dim = spec.dim();
    let mut rng = RngState::new(seed);
    let mut data = Vec::with_capacity(spec.total() * dim);
    let mut labels = Vec::with_capacity(spec.total());
    for (y, ((mean, &scale), &count)) in spec.means.iter().zip(&spec.scales).zip(&spec.counts).enumerate() {
        for _ in 0..count {
            data.extend(mean.iter().map(|m| m + scale * rng.normal()));
            labels.push(y);
        }
    }
    let ds = LabeledDataset::new(
        Tensor::matrix(labels.len(), dim, data),
        labels,
        (0..spec.means.len()).map(|c| format!("c{c}")).collect(),
        numeric_meta("x", dim),
        format!("synthetic-gmm(seed={seed})"),
    )?;
    Ok((ds, MixtureDensity::from_spec(spec)))
}
