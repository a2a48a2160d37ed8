use rayon::prelude::*;

use crate::clustering::sq_dist;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Guards `1 / mean reach-distance` against duplicate-point clusters.
const LRD_EPS: f64 = 1e-10;

/// Local outlier factor fitted on a reference set.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalOutlierFactor {
    points: Tensor,
    k: usize,
    k_distance: Vec<f64>,
    lrd: Vec<f64>,
    /// LOF of each reference point against the others.
    train_scores: Vec<f64>,
}

/// Indices and distances of the `k` nearest reference points, nearest first,
/// ties by index; `exclude` skips one reference index.
fn knn(points: &Tensor, x: &[f64], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = points
        .row_iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, p)| (i, sq_dist(p, x).sqrt()))
        .collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if all.len() > k {
        all.select_nth_unstable_by(k - 1, cmp);
        all.truncate(k);
    }
    all.sort_by(cmp);
    all
}

impl LocalOutlierFactor {
    pub fn fit(points: &Tensor, k: usize) -> Result<Self> {
        let n = points.rows();
        if k == 0 || k >= n {
            return Err(Error::contract(format!("LOF needs 1 <= k_neighbors < n (k = {k}, n = {n})")));
        }
        let neighbors: Vec<Vec<(usize, f64)>> = (0..n)
            .into_par_iter()
            .map(|i| knn(points, points.row(i), k, Some(i)))
            .collect();
        let k_distance: Vec<f64> = neighbors.iter().map(|nb| nb[k - 1].1).collect();
        let lrd_of = |nb: &[(usize, f64)]| {
            let reach: f64 = nb.iter().map(|&(o, d)| d.max(k_distance[o])).sum();
            1.0 / (reach / nb.len() as f64 + LRD_EPS)
        };
        let lrd: Vec<f64> = neighbors.iter().map(|nb| lrd_of(nb)).collect();
        let train_scores = neighbors
            .iter()
            .zip(&lrd)
            .map(|(nb, &own)| nb.iter().map(|&(o, _)| lrd[o]).sum::<f64>() / (nb.len() as f64 * own))
            .collect();
        Ok(Self {
            points: points.clone(),
            k,
            k_distance,
            lrd,
            train_scores,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// LOF values of the fitted points, each computed without itself.
    pub fn train_scores(&self) -> &[f64] {
        &self.train_scores
    }

    /// LOF of an arbitrary point against the fitted reference set.
    pub fn score_point(&self, x: &[f64]) -> f64 {
        let nb = knn(&self.points, x, self.k, None);
        let reach: f64 = nb.iter().map(|&(o, d)| d.max(self.k_distance[o])).sum();
        let own = 1.0 / (reach / nb.len() as f64 + LRD_EPS);
        nb.iter().map(|&(o, _)| self.lrd[o]).sum::<f64>() / (nb.len() as f64 * own)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbor_ties_go_to_lower_index() {
        let pts = Tensor::matrix(4, 1, vec![0.0, 1.0, -1.0, 2.0]);
        let nb = knn(&pts, &[0.0], 2, Some(0));
        assert_eq!(nb, vec![(1, 1.0), (2, 1.0)]);
    }

    #[test]
    fn fitted_point_scores_match_out_of_sample_form_for_new_points() {
        let pts = Tensor::matrix(5, 1, vec![0.0, 1.0, 2.0, 3.0, 10.0]);
        let lof = LocalOutlierFactor::fit(&pts, 2).unwrap();
        assert!(lof.train_scores()[4] > 2.0);
        assert!(lof.score_point(&[20.0]) > lof.score_point(&[1.5]));
    }
}
