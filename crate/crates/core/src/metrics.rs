//! Entropy-based clustering validity (homogeneity, completeness, V-score)
//! and the per-class anomaly-distribution RMSE.
//!
//! Entropies are in nats; homogeneity and completeness are ratios, so the
//! base cancels.

use crate::error::{Error, Result};

/// Class-by-cluster co-occurrence counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    /// `counts[c][k]`: members of class `c` assigned to cluster `k`.
    counts: Vec<Vec<u64>>,
    n: u64,
}

impl ContingencyTable {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let width = counts.first().map_or(0, Vec::len);
        if counts.is_empty() || width == 0 || counts.iter().any(|r| r.len() != width) {
            return Err(Error::contract("contingency table must be a non-empty rectangle"));
        }
        let n = counts.iter().flatten().sum();
        Ok(Self { counts, n })
    }

    /// Builds the table from paired class labels and cluster indices.
    pub fn from_labels(classes: &[usize], clusters: &[usize]) -> Result<Self> {
        if classes.len() != clusters.len() || classes.is_empty() {
            return Err(Error::contract(format!(
                "{} class labels vs {} cluster indices",
                classes.len(),
                clusters.len()
            )));
        }
        let n_classes = classes.iter().max().unwrap() + 1;
        let n_clusters = clusters.iter().max().unwrap() + 1;
        let mut counts = vec![vec![0u64; n_clusters]; n_classes];
        for (&c, &k) in classes.iter().zip(clusters) {
            counts[c][k] += 1;
        }
        Self::from_counts(counts)
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.n
    }

    /// Clusters become classes and vice versa.
    pub fn transpose(&self) -> Self {
        let rows = self.counts.len();
        let cols = self.counts[0].len();
        let counts = (0..cols).map(|k| (0..rows).map(|c| self.counts[c][k]).collect()).collect();
        Self { counts, n: self.n }
    }

    fn class_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    fn cluster_totals(&self) -> Vec<u64> {
        (0..self.counts[0].len())
            .map(|k| self.counts.iter().map(|r| r[k]).sum())
            .collect()
    }
}

/// Plug-in entropy `-sum p_i ln p_i` with `0 ln 0 = 0`.
pub fn entropy(counts: &[u64]) -> Result<f64> {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(Error::contract("entropy of an all-zero count vector"));
    }
    let n = n as f64;
    Ok(-counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>())
}

/// `H(C | K)` computed from the joint counts.
fn conditional_class_entropy(table: &ContingencyTable) -> f64 {
    let n = table.n as f64;
    let cluster_totals = table.cluster_totals();
    let mut h = 0.0;
    for row in &table.counts {
        for (k, &a) in row.iter().enumerate() {
            if a > 0 {
                h -= a as f64 / n * (a as f64 / cluster_totals[k] as f64).ln();
            }
        }
    }
    h
}

/// `1 - H(C|K) / H(C)`, or 1 when there is a single class.
pub fn homogeneity(table: &ContingencyTable) -> Result<f64> {
    if table.n == 0 {
        return Err(Error::contract("homogeneity of an empty table"));
    }
    let h_c = entropy(&table.class_totals())?;
    if h_c == 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 - conditional_class_entropy(table) / h_c).clamp(0.0, 1.0))
}

/// `1 - H(K|C) / H(K)`, or 1 when there is a single cluster.
pub fn completeness(table: &ContingencyTable) -> Result<f64> {
    homogeneity(&table.transpose())
}

/// `(1 + beta) h c / (beta h + c)`, zero when the denominator vanishes.
pub fn v_score(h: f64, c: f64, beta: f64) -> f64 {
    let denom = beta * h + c;
    if denom == 0.0 {
        return 0.0;
    }
    (1.0 + beta) * h * c / denom
}

/// V-score of a clustering against true classes.
pub fn v_score_labels(classes: &[usize], clusters: &[usize], beta: f64) -> Result<f64> {
    let table = ContingencyTable::from_labels(classes, clusters)?;
    Ok(v_score(homogeneity(&table)?, completeness(&table)?, beta))
}

/// Root-mean-square difference between two per-class fraction vectors.
pub fn anomaly_distribution_rmse(flagged: &[f64], reference: &[f64]) -> Result<f64> {
    if flagged.len() != reference.len() || flagged.is_empty() {
        return Err(Error::contract(format!(
            "rmse over {} vs {} classes",
            flagged.len(),
            reference.len()
        )));
    }
    let mse = flagged
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / flagged.len() as f64;
    Ok(mse.sqrt())
}

/// Share of each class that is flagged: `flagged_in_class / class_size`.
/// Classes without members get 0.
pub fn flagged_fraction_per_class(labels: &[usize], flagged: &[usize], class_count: usize) -> Vec<f64> {
    let mut sizes = vec![0usize; class_count];
    for &l in labels {
        sizes[l] += 1;
    }
    let mut hits = vec![0usize; class_count];
    for &i in flagged {
        hits[labels[i]] += 1;
    }
    hits.iter()
        .zip(&sizes)
        .map(|(&h, &s)| if s == 0 { 0.0 } else { h as f64 / s as f64 })
        .collect()
}
