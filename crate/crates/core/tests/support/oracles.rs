//! Brute-force references for the clustering metrics and EM/MV curves.

use clvae_core::emmv::{alpha_grid, LevelTable};
use clvae_core::metrics::{completeness, homogeneity, v_score, ContingencyTable};
use clvae_core::numerics::RngState;

fn h(probs: impl Iterator<Item = f64>) -> f64 {
    -probs.filter(|&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// (homogeneity, completeness, V) from joint, class and cluster entropies:
/// `H(C|K) = H(C,K) - H(K)`.
pub fn brute_force_metrics(counts: &[Vec<u64>]) -> (f64, f64, f64) {
    let n: u64 = counts.iter().flatten().sum();
    let n = n as f64;
    let rows = counts.len();
    let cols = counts[0].len();
    let joint = h(counts.iter().flatten().map(|&c| c as f64 / n));
    let hc = h((0..rows).map(|r| counts[r].iter().sum::<u64>() as f64 / n));
    let hk = h((0..cols).map(|k| counts.iter().map(|r| r[k]).sum::<u64>() as f64 / n));
    let hom = if hc == 0.0 { 1.0 } else { 1.0 - (joint - hk) / hc };
    let com = if hk == 0.0 { 1.0 } else { 1.0 - (joint - hc) / hk };
    let v = if hom + com == 0.0 { 0.0 } else { 2.0 * hom * com / (hom + com) };
    (hom, com, v)
}

/// Largest deviation between the library and the brute force over `cases`
/// random tables of up to 6 x 6.
pub fn metric_oracle_max_error(cases: usize, seed: u64) -> f64 {
    let mut rng = RngState::new(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < cases {
        let rows = 1 + rng.below(6);
        let cols = 1 + rng.below(6);
        let sparse = rng.below(2) == 0;
        let counts: Vec<Vec<u64>> = (0..rows)
            .map(|_| {
                (0..cols)
                    .map(|_| if sparse && rng.below(2) == 0 { 0 } else { rng.below(30) as u64 })
                    .collect()
            })
            .collect();
        if counts.iter().flatten().all(|&c| c == 0) {
            continue;
        }
        let table = ContingencyTable::from_counts(counts.clone()).unwrap();
        let (bh, bc, bv) = brute_force_metrics(&counts);
        let lh = homogeneity(&table).unwrap();
        let lc = completeness(&table).unwrap();
        let lv = v_score(lh, lc, 1.0);
        worst = worst.max((lh - bh).abs()).max((lc - bc).abs()).max((lv - bv).abs());
        done += 1;
    }
    worst
}

/// A piecewise-constant scorer on `[0, 1]`: interval `j` has length
/// `lengths[j]` and score `values[j]`; `counts[j]` data points fall in it.
pub struct StepScorer {
    pub values: Vec<f64>,
    pub lengths: Vec<f64>,
    pub counts: Vec<usize>,
}

impl StepScorer {
    fn data_scores(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.counts)
            .flat_map(|(&v, &c)| std::iter::repeat(v).take(c))
            .collect()
    }

    fn volume_at_least(&self, u: f64) -> f64 {
        self.values.iter().zip(&self.lengths).filter(|(v, _)| **v >= u).map(|(_, l)| l).sum()
    }

    /// Every superlevel set of the scorer, including the empty and the full one.
    fn level_sets(&self) -> Vec<(f64, f64)> {
        let n: usize = self.counts.iter().sum();
        let mut out = vec![(0.0, 0.0)];
        let mut thresholds = self.values.clone();
        thresholds.push(0.0);
        for u in thresholds {
            let c: usize = self.values.iter().zip(&self.counts).filter(|(v, _)| **v >= u).map(|(_, c)| c).sum();
            out.push((c as f64 / n as f64, self.volume_at_least(u)));
        }
        out
    }

    pub fn brute_em(&self, t: f64) -> f64 {
        self.level_sets().iter().map(|(p, v)| p - t * v).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn brute_mv(&self, alpha: f64) -> f64 {
        self.level_sets()
            .iter()
            .filter(|(p, _)| *p >= alpha)
            .map(|(_, v)| *v)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Enumerates every data count vector with entries in `0..=max_count` for
/// scorers with 1..=6 distinct values; returns (cases, mismatching curve points).
pub fn emmv_oracle(max_count: usize, seed: u64) -> (usize, usize) {
    let mut rng = RngState::new(seed);
    let alphas = alpha_grid();
    let (mut cases, mut mismatches) = (0, 0);
    for m in 1..=6usize {
        // Dyadic lengths keep every volume sum exact.
        let lengths: Vec<f64> = (0..m).map(|_| (1 + rng.below(16)) as f64 / 64.0).collect();
        let mut values: Vec<f64> = (0..m).map(|j| (j + 1) as f64 * 0.125).collect();
        rng.shuffle(&mut values);
        let base = max_count + 1;
        for code in 0..base.pow(m as u32) {
            let counts: Vec<usize> = (0..m).map(|j| code / base.pow(j as u32) % base).collect();
            if counts.iter().all(|&c| c == 0) {
                continue;
            }
            let s = StepScorer {
                values: values.clone(),
                lengths: lengths.clone(),
                counts,
            };
            let table = LevelTable::exact(&s.data_scores(), |u| s.volume_at_least(u)).unwrap();
            let t_grid: Vec<f64> = (0..40).map(|i| i as f64 * 0.5).collect();
            for &t in &t_grid {
                if table.em_value(t) != s.brute_em(t) {
                    mismatches += 1;
                }
            }
            for &a in &alphas {
                if table.mv_value(a).unwrap() != s.brute_mv(a) {
                    mismatches += 1;
                }
            }
            cases += 1;
        }
    }
    (cases, mismatches)
}
