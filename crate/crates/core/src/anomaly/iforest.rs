use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{mix_seed, RngState, Tensor};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average unsuccessful-search path length in a binary search tree of `m` keys.
pub fn average_path_length(m: usize) -> f64 {
    match m {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = m as f64;
            2.0 * ((m - 1.0).ln() + EULER_GAMMA) - 2.0 * (m - 1.0) / m
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Node {
    Split { dim: usize, threshold: f64, left: usize, right: usize },
    Leaf { size: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct IsolationTree {
    nodes: Vec<Node>,
}

impl IsolationTree {
    fn build(points: &Tensor, sample: Vec<usize>, height_limit: usize, rng: &mut RngState) -> Self {
        let mut tree = Self { nodes: Vec::new() };
        tree.grow(points, sample, 0, height_limit, rng);
        tree
    }

    fn grow(&mut self, points: &Tensor, idx: Vec<usize>, depth: usize, limit: usize, rng: &mut RngState) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { size: idx.len() });
        if depth >= limit || idx.len() <= 1 {
            return id;
        }
        let dim_count = points.cols();
        let ranges: Vec<(f64, f64)> = (0..dim_count)
            .map(|d| {
                idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = points.row(i)[d];
                    (lo.min(v), hi.max(v))
                })
            })
            .collect();
        let splittable: Vec<usize> = (0..dim_count).filter(|&d| ranges[d].1 > ranges[d].0).collect();
        if splittable.is_empty() {
            return id;
        }
        let dim = splittable[rng.below(splittable.len())];
        let (lo, hi) = ranges[dim];
        let threshold = lo + rng.uniform() * (hi - lo);
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| points.row(i)[dim] < threshold);
        let left = self.grow(points, l, depth + 1, limit, rng);
        let right = self.grow(points, r, depth + 1, limit, rng);
        self.nodes[id] = Node::Split { dim, threshold, left, right };
        id
    }

    fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        let mut depth = 0.0;
        loop {
            match self.nodes[node] {
                Node::Split { dim, threshold, left, right } => {
                    node = if x[dim] < threshold { left } else { right };
                    depth += 1.0;
                }
                Node::Leaf { size } => return depth + average_path_length(size),
            }
        }
    }
}

/// A fitted isolation forest; scores any point of the training width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsolationForest {
    trees: Vec<IsolationTree>,
    subsample: usize,
    dim: usize,
}

impl IsolationForest {
    /// Tree `t` draws its subsample and splits from `mix_seed(seed, t)`.
    /// A subsample larger than `n` is clamped with a warning.
    pub fn fit(points: &Tensor, n_trees: usize, subsample: usize, seed: u64) -> Result<Self> {
        let n = points.rows();
        if n < 2 || n_trees == 0 || subsample == 0 {
            return Err(Error::contract(format!(
                "isolation forest needs n >= 2, n_trees >= 1, subsample >= 1 (got {n}, {n_trees}, {subsample})"
            )));
        }
        let subsample = if subsample > n {
            log::warn!("isolation forest subsample {subsample} exceeds {n} points; clamping");
            n
        } else {
            subsample
        };
        let height_limit = (subsample as f64).log2().ceil() as usize;
        let trees = (0..n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = RngState::new(mix_seed(seed, t as u64));
                let sample = rng.sample_indices(n, subsample);
                IsolationTree::build(points, sample, height_limit, &mut rng)
            })
            .collect();
        Ok(Self {
            trees,
            subsample,
            dim: points.cols(),
        })
    }

    pub fn subsample(&self) -> usize {
        self.subsample
    }

    /// `2^(-mean path length / c(subsample))`.
    pub fn score_point(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let mean = self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64;
        let c = average_path_length(self.subsample);
        if c == 0.0 {
            return 0.5;
        }
        2f64.powf(-mean / c)
    }

    pub fn score(&self, points: &Tensor) -> Vec<f64> {
        (0..points.rows()).into_par_iter().map(|i| self.score_point(points.row(i))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_constant() {
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        let h = 255f64.ln() + EULER_GAMMA;
        assert!((average_path_length(256) - (2.0 * h - 2.0 * 255.0 / 256.0)).abs() < 1e-12);
    }

    #[test]
    fn constant_data_cannot_be_split() {
        let pts = Tensor::matrix(4, 2, vec![1.0; 8]);
        let f = IsolationForest::fit(&pts, 3, 4, 0).unwrap();
        // Every point sits in a root leaf of size 4: path = c(4), score = 0.5.
        for s in f.score(&pts) {
            assert!((s - 0.5).abs() < 1e-12);
        }
    }
}
