//! k-means and full-covariance Gaussian-mixture clustering of latent points,
//! and a V-score sweep over the cluster count.

mod em;
mod kmeans;

pub use em::{em_gmm, EM_MAX_ITER, EM_TOL};
pub use kmeans::kmeans;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::v_score_labels;
use crate::numerics::{mix_seed, Tensor};

/// Fitted model parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ClusterParams {
    KMeans {
        centroids: Tensor,
    },
    Gmm {
        weights: Vec<f64>,
        means: Tensor,
        /// One row-major `p x p` matrix per component.
        covariances: Vec<Tensor>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub assignment: Vec<usize>,
    pub k: usize,
    pub params: ClusterParams,
    /// Inertia for k-means, total log-likelihood for EM.
    pub objective: f64,
    pub objective_trace: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterAlgo {
    Kmeans,
    Em,
}

impl ClusterAlgo {
    pub fn fit(self, points: &Tensor, k: usize, seed: u64) -> Result<ClusterAssignment> {
        match self {
            ClusterAlgo::Kmeans => kmeans(points, k, seed, KMEANS_MAX_ITER, KMEANS_TOL),
            ClusterAlgo::Em => em_gmm(points, k, seed, EM_MAX_ITER, EM_TOL),
        }
    }
}

pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_TOL: f64 = 1e-8;
pub const DEFAULT_K_RANGE: std::ops::RangeInclusive<usize> = 2..=20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub v_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub algo: ClusterAlgo,
    pub rows: Vec<SweepRow>,
    pub best: SweepRow,
}

/// Fits once per `k` (seed mixed with `k`) and scores each fit against
/// `true_labels`. Ties go to the smallest `k`.
pub fn sweep_vscore(
    points: &Tensor,
    true_labels: &[usize],
    k_range: &[usize],
    algo: ClusterAlgo,
    seed: u64,
) -> Result<SweepResult> {
    if k_range.is_empty() {
        return Err(Error::contract("empty k range"));
    }
    if true_labels.len() != points.rows() {
        return Err(Error::contract(format!(
            "{} labels for {} points",
            true_labels.len(),
            points.rows()
        )));
    }
    let rows = k_range
        .par_iter()
        .map(|&k| {
            let fit = algo.fit(points, k, mix_seed(seed, k as u64))?;
            Ok(SweepRow {
                k,
                v_score: v_score_labels(true_labels, &fit.assignment, 1.0)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = rows[0].clone();
    for r in &rows[1..] {
        if r.v_score > best.v_score || (r.v_score == best.v_score && r.k < best.k) {
            best = r.clone();
        }
    }
    Ok(SweepResult { algo, rows, best })
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn check_fit_args(points: &Tensor, k: usize) -> Result<()> {
    if points.shape().len() != 2 || points.rows() == 0 {
        return Err(Error::contract("clustering needs a non-empty n x p matrix"));
    }
    if k == 0 || k > points.rows() {
        return Err(Error::contract(format!("k = {k} with {} points", points.rows())));
    }
    if !points.is_finite() {
        return Err(Error::contract("non-finite point coordinates"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;

    fn blobs(n_blobs: usize, per: usize) -> (Tensor, Vec<usize>) {
        let mut rng = RngState::new(21);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for b in 0..n_blobs {
            let angle = b as f64 * std::f64::consts::TAU / n_blobs as f64;
            for _ in 0..per {
                rows.push(vec![30.0 * angle.cos() + 0.5 * rng.normal(), 30.0 * angle.sin() + 0.5 * rng.normal()]);
                labels.push(b);
            }
        }
        (Tensor::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn sweep_recovers_blob_count() {
        let (pts, labels) = blobs(4, 50);
        for algo in [ClusterAlgo::Kmeans, ClusterAlgo::Em] {
            let ks: Vec<usize> = (2..=7).collect();
            let res = sweep_vscore(&pts, &labels, &ks, algo, 5).unwrap();
            assert_eq!(res.best.k, 4, "{algo:?}");
            assert!(res.best.v_score > 0.99);
            assert!(res.rows.iter().all(|r| (0.0..=1.0).contains(&r.v_score)));
        }
    }

    #[test]
    fn permuted_input_gives_same_partition() {
        let (pts, _) = blobs(3, 30);
        let n = pts.rows();
        let perm: Vec<usize> = (0..n).rev().collect();
        let shuffled = pts.select_rows(&perm);
        for algo in [ClusterAlgo::Kmeans, ClusterAlgo::Em] {
            let a = algo.fit(&pts, 3, 9).unwrap().assignment;
            let b = algo.fit(&shuffled, 3, 9).unwrap().assignment;
            let b_back: Vec<usize> = {
                let mut out = vec![0; n];
                for (pos, &orig) in perm.iter().enumerate() {
                    out[orig] = b[pos];
                }
                out
            };
            assert_eq!(v_score_labels(&a, &b_back, 1.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn fits_are_deterministic() {
        let (pts, _) = blobs(3, 30);
        for algo in [ClusterAlgo::Kmeans, ClusterAlgo::Em] {
            assert_eq!(algo.fit(&pts, 4, 2).unwrap(), algo.fit(&pts, 4, 2).unwrap());
        }
    }
}
