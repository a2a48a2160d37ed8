//! Excess-mass and mass-volume curves of a scoring function, with Monte
//! Carlo estimates of superlevel-set volumes.
//!
//! Scores here are "higher = more normal" and non-negative. Detector outputs
//! (higher = more anomalous) go through [`normality_from_anomaly`] first.
//!
//! All curve values are built from one [`LevelTable`]: a list of candidate
//! levels `u` with their empirical tail mass `P(s >= u)` and superlevel
//! volume `Leb(s >= u)`. The same Monte Carlo sample serves every level.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{mix_seed, RngState, Tensor};

pub const DEFAULT_MC_SAMPLES: usize = 100_000;
pub const MAX_LEVELS: usize = 512;
pub const GRID_POINTS: usize = 100;
pub const ALPHA_MIN: f64 = 0.9;
pub const ALPHA_MAX: f64 = 0.999;
/// Relative margin added on each side of the data bounding box.
pub const BOX_MARGIN: f64 = 0.1;
const MC_CHUNK: usize = 4096;
/// Smallest positive t of the EM grid, relative to `t_star`.
const T_GRID_SPAN: f64 = 1e-3;

/// Baseline scorer: a uniform value in `[0, 1)` hashed from the coordinates,
/// independent of any density.
pub fn random_score(seed: u64, x: &[f64]) -> f64 {
    let h = x.iter().fold(seed, |acc, v| mix_seed(acc, v.to_bits()));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Maps an anomaly score to a non-negative normality score, order reversed.
pub fn normality_from_anomaly(score: f64) -> f64 {
    (-score).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportBox {
    bounds: Vec<(f64, f64)>,
}

impl SupportBox {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() || bounds.iter().any(|&(lo, hi)| !(hi > lo) || !lo.is_finite() || !hi.is_finite()) {
            return Err(Error::contract(format!("invalid support box {bounds:?}")));
        }
        Ok(Self { bounds })
    }

    /// Bounding box of `points`, widened by `margin` times the extent per side.
    /// A zero-width axis is widened by `margin` in absolute terms.
    pub fn from_points(points: &Tensor, margin: f64) -> Result<Self> {
        if points.rows() == 0 {
            return Err(Error::contract("support box of no points"));
        }
        let bounds = (0..points.cols())
            .map(|d| {
                let (lo, hi) = points.row_iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    (lo.min(p[d]), hi.max(p[d]))
                });
                let pad = if hi > lo { margin * (hi - lo) } else { margin.max(f64::EPSILON) };
                (lo - pad, hi + pad)
            })
            .collect();
        Self::new(bounds)
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(|(lo, hi)| hi - lo).product()
    }

    fn sample_into(&self, rng: &mut RngState, out: &mut [f64]) {
        for (x, &(lo, hi)) in out.iter_mut().zip(&self.bounds) {
            *x = rng.uniform_range(lo, hi);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl ScoreCurve {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() || grid.is_empty() {
            return Err(Error::contract("curve grid and values differ in length"));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::contract("curve grid must be strictly ascending"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite curve value".into()));
        }
        Ok(Self { grid, values })
    }

    /// Trapezoidal area under the curve over its grid.
    pub fn area(&self) -> f64 {
        trapezoid(&self.grid, &self.values)
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xw, yw)| 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1]))
        .sum()
}

/// Fraction of `data_scores` that are `>= u`.
pub fn empirical_tail(data_scores: &[f64], u: f64) -> f64 {
    data_scores.iter().filter(|&&s| s >= u).count() as f64 / data_scores.len() as f64
}

/// Scores of `n_mc` uniform box samples. Chunk `c` draws from
/// `mix_seed(base, c)` with `base` taken from `rng`, so the result does not
/// depend on thread count.
fn mc_scores<F>(score_fn: &F, support: &SupportBox, n_mc: usize, rng: &mut RngState) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let base = rng.next_u64();
    let chunks = n_mc.div_ceil(MC_CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut local = RngState::new(mix_seed(base, c as u64));
            let len = MC_CHUNK.min(n_mc - c * MC_CHUNK);
            let mut x = vec![0.0; support.dim()];
            (0..len)
                .map(|_| {
                    support.sample_into(&mut local, &mut x);
                    score_fn(&x)
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Box volume times the share of uniform samples scoring `>= u`.
pub fn mc_volume<F>(score_fn: &F, u: f64, support: &SupportBox, n_mc: usize, rng: &mut RngState) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if n_mc == 0 {
        return Err(Error::contract("n_mc must be positive"));
    }
    let scores = mc_scores(score_fn, support, n_mc, rng);
    Ok(support.volume() * empirical_tail(&scores, u))
}

/// Candidate levels with their tail masses and superlevel volumes.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelTable {
    pub levels: Vec<f64>,
    pub mass: Vec<f64>,
    pub volume: Vec<f64>,
}

/// Unique data scores plus 0, ascending; at most `MAX_LEVELS` quantile-spaced
/// data values (always including the minimum and maximum).
pub fn level_grid(data_scores: &[f64]) -> Vec<f64> {
    let mut unique: Vec<f64> = data_scores.to_vec();
    unique.sort_by(f64::total_cmp);
    unique.dedup();
    if unique.len() > MAX_LEVELS {
        let m = unique.len() - 1;
        let picked: Vec<f64> = (0..MAX_LEVELS)
            .map(|i| unique[(i * m + (MAX_LEVELS - 1) / 2) / (MAX_LEVELS - 1)])
            .collect();
        unique = picked;
        unique.dedup();
    }
    if unique.first().map_or(true, |&lo| lo > 0.0) {
        unique.insert(0, 0.0);
    }
    unique
}

fn check_scores(data_scores: &[f64]) -> Result<()> {
    if data_scores.is_empty() {
        return Err(Error::contract("no data scores"));
    }
    if data_scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::contract("data scores must be finite and non-negative"));
    }
    Ok(())
}

/// Count of sorted values `>= u`.
fn count_at_least(sorted: &[f64], u: f64) -> usize {
    sorted.len() - sorted.partition_point(|&s| s < u)
}

impl LevelTable {
    /// Volumes from `volume_of(u)`; used with exactly known level sets.
    pub fn exact(data_scores: &[f64], volume_of: impl Fn(f64) -> f64) -> Result<Self> {
        check_scores(data_scores)?;
        let levels = level_grid(data_scores);
        let mass = levels.iter().map(|&u| empirical_tail(data_scores, u)).collect();
        let volume = levels.iter().map(|&u| volume_of(u)).collect();
        Ok(Self { levels, mass, volume })
    }

    /// Volumes from one shared Monte Carlo sample of the box.
    pub fn estimate<F>(data_scores: &[f64], score_fn: &F, support: &SupportBox, n_mc: usize, rng: &mut RngState) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        check_scores(data_scores)?;
        if n_mc == 0 {
            return Err(Error::contract("n_mc must be positive"));
        }
        let mut mc = mc_scores(score_fn, support, n_mc, rng);
        mc.sort_by(f64::total_cmp);
        let mut data = data_scores.to_vec();
        data.sort_by(f64::total_cmp);
        let levels = level_grid(data_scores);
        let vol = support.volume();
        let mass = levels.iter().map(|&u| count_at_least(&data, u) as f64 / data.len() as f64).collect();
        let volume = levels
            .iter()
            .map(|&u| vol * count_at_least(&mc, u) as f64 / n_mc as f64)
            .collect();
        Ok(Self { levels, mass, volume })
    }

    /// `EM(t) = max_u P(s >= u) - t Leb(s >= u)`; the empty level set above
    /// every score contributes 0.
    pub fn em_value(&self, t: f64) -> f64 {
        self.mass
            .iter()
            .zip(&self.volume)
            .map(|(p, v)| p - t * v)
            .fold(0.0, f64::max)
    }

    pub fn em_curve(&self, t_grid: &[f64]) -> Result<ScoreCurve> {
        if t_grid.first().is_some_and(|&t| t < 0.0) {
            return Err(Error::contract("EM t grid must start at t >= 0"));
        }
        ScoreCurve::new(t_grid.to_vec(), t_grid.iter().map(|&t| self.em_value(t)).collect())
    }

    /// `MV(alpha) = min { Leb(s >= u) : P(s >= u) >= alpha }`.
    pub fn mv_value(&self, alpha: f64) -> Result<f64> {
        self.mass
            .iter()
            .zip(&self.volume)
            .filter(|(p, _)| **p >= alpha)
            .map(|(_, v)| *v)
            .reduce(f64::min)
            .ok_or_else(|| Error::contract(format!("no level reaches mass {alpha}")))
    }

    pub fn mv_curve(&self, alpha_grid: &[f64]) -> Result<ScoreCurve> {
        if alpha_grid.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::contract("MV alpha grid must lie in (0, 1)"));
        }
        let values = alpha_grid.iter().map(|&a| self.mv_value(a)).collect::<Result<Vec<_>>>()?;
        ScoreCurve::new(alpha_grid.to_vec(), values)
    }

    /// Smallest `t >= 0` with `EM(t) <= level`: every line `P - t V` with
    /// `P > level` must have dropped below it.
    pub fn em_inverse(&self, level: f64) -> Result<f64> {
        let mut t: f64 = 0.0;
        for (&p, &v) in self.mass.iter().zip(&self.volume) {
            if p > level {
                if v <= 0.0 {
                    return Err(Error::Numeric(format!(
                        "EM curve never drops to {level}: mass {p} sits on a zero-volume level set"
                    )));
                }
                t = t.max((p - level) / v);
            }
        }
        Ok(t)
    }
}

pub fn em_curve<F>(
    data_scores: &[f64],
    score_fn: &F,
    support: &SupportBox,
    t_grid: &[f64],
    n_mc: usize,
    rng: &mut RngState,
) -> Result<ScoreCurve>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    LevelTable::estimate(data_scores, score_fn, support, n_mc, rng)?.em_curve(t_grid)
}

pub fn mv_curve<F>(
    data_scores: &[f64],
    score_fn: &F,
    support: &SupportBox,
    alpha_grid: &[f64],
    n_mc: usize,
    rng: &mut RngState,
) -> Result<ScoreCurve>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    LevelTable::estimate(data_scores, score_fn, support, n_mc, rng)?.mv_curve(alpha_grid)
}

/// Zero followed by `GRID_POINTS - 1` geometric steps ending at `t_max`.
pub fn t_grid(t_max: f64) -> Vec<f64> {
    let steps = GRID_POINTS - 1;
    let mut grid = vec![0.0];
    grid.extend((0..steps).map(|i| t_max * T_GRID_SPAN.powf(1.0 - i as f64 / (steps - 1) as f64)));
    grid
}

/// `GRID_POINTS` evenly spaced values on `[ALPHA_MIN, ALPHA_MAX]`.
pub fn alpha_grid() -> Vec<f64> {
    let step = (ALPHA_MAX - ALPHA_MIN) / (GRID_POINTS - 1) as f64;
    (0..GRID_POINTS).map(|i| ALPHA_MIN + step * i as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmMvResult {
    pub em_area: f64,
    pub mv_area: f64,
    pub t_star: f64,
    pub mc_samples: usize,
    pub seed: u64,
    pub em_curve: ScoreCurve,
    pub mv_curve: ScoreCurve,
}

impl EmMvResult {
    pub fn from_table(table: &LevelTable, mc_samples: usize, seed: u64) -> Result<Self> {
        let t_star = table.em_inverse(ALPHA_MIN)?;
        if !(t_star > 0.0) {
            return Err(Error::Numeric("EM curve is already at 0.9 for t = 0".into()));
        }
        let em = table.em_curve(&t_grid(t_star))?;
        let mv = table.mv_curve(&alpha_grid())?;
        Ok(Self {
            em_area: em.area(),
            mv_area: mv.area(),
            t_star,
            mc_samples,
            seed,
            em_curve: em,
            mv_curve: mv,
        })
    }
}

/// EM area over `[0, EM^-1(0.9)]` and MV area over `[0.9, 0.999]`.
pub fn emmv_scores<F>(data_scores: &[f64], score_fn: &F, support: &SupportBox, n_mc: usize, seed: u64) -> Result<EmMvResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut rng = RngState::new(seed);
    let table = LevelTable::estimate(data_scores, score_fn, support, n_mc, &mut rng)?;
    EmMvResult::from_table(&table, n_mc, seed)
}

/// Trapezoidal integral of `|a - b|` over the shared grid.
pub fn curve_l1_distance(a: &ScoreCurve, b: &ScoreCurve) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::contract("curves are on different grids"));
    }
    let diff: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).collect();
    Ok(trapezoid(&a.grid, &diff))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(dim: usize) -> SupportBox {
        SupportBox::new(vec![(0.0, 1.0); dim]).unwrap()
    }

    #[test]
    fn tail_counts() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(empirical_tail(&s, 0.5), 1.0);
        assert_eq!(empirical_tail(&s, 1.0), 1.0);
        assert_eq!(empirical_tail(&s, 4.5), 0.0);
        assert_eq!(empirical_tail(&s, 2.5), 0.5);
    }

    #[test]
    fn volume_cases() {
        let mut rng = RngState::new(0);
        let b = SupportBox::new(vec![(0.0, 2.0), (1.0, 4.0)]).unwrap();
        assert_eq!(mc_volume(&|_: &[f64]| 3.0, 3.0, &b, 1000, &mut rng).unwrap(), 6.0);
        assert_eq!(mc_volume(&|_: &[f64]| 3.0, 3.5, &b, 1000, &mut rng).unwrap(), 0.0);
        let half = mc_volume(&|x: &[f64]| x[0], 0.5, &unit(2), 100_000, &mut rng).unwrap();
        assert!((half - 0.5).abs() < 0.01, "{half}");
    }

    #[test]
    fn em_starts_at_one_and_decreases() {
        let mut rng = RngState::new(1);
        let data: Vec<f64> = (0..50).map(|_| rng.uniform()).collect();
        let table = LevelTable::estimate(&data, &|x: &[f64]| x[0], &unit(1), 20_000, &mut rng).unwrap();
        let curve = table.em_curve(&t_grid(3.0)).unwrap();
        assert_eq!(curve.values[0], 1.0);
        assert!(curve.values.windows(2).all(|w| w[1] <= w[0]));
        let mv = table.mv_curve(&alpha_grid()).unwrap();
        assert!(mv.values.windows(2).all(|w| w[1] >= w[0]));
        for t in [0.1, 0.7, 2.0] {
            for (p, v) in table.mass.iter().zip(&table.volume) {
                assert!(table.em_value(t) >= p - t * v);
            }
        }
    }

    #[test]
    fn em_inverse_is_the_crossing() {
        let t = LevelTable {
            levels: vec![0.0, 1.0, 2.0],
            mass: vec![1.0, 0.95, 0.5],
            volume: vec![4.0, 1.0, 0.2],
        };
        let ts = t.em_inverse(0.9).unwrap();
        assert!((ts - 0.05).abs() < 1e-15);
        assert!((t.em_value(ts) - 0.9).abs() < 1e-15);
        let flat = LevelTable {
            levels: vec![0.0, 1.0],
            mass: vec![1.0, 1.0],
            volume: vec![1.0, 0.0],
        };
        assert!(flat.em_inverse(0.9).is_err());
    }

    #[test]
    fn level_grid_caps_and_keeps_extremes() {
        let data: Vec<f64> = (1..=2000).map(|i| i as f64).collect();
        let g = level_grid(&data);
        assert_eq!(g.len(), MAX_LEVELS + 1);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1], 1.0);
        assert_eq!(*g.last().unwrap(), 2000.0);
        assert_eq!(level_grid(&[0.0, 3.0, 3.0]), vec![0.0, 3.0]);
    }

    #[test]
    fn grids() {
        let t = t_grid(2.0);
        assert_eq!(t.len(), GRID_POINTS);
        assert_eq!(t[0], 0.0);
        assert!((t[1] - 2e-3).abs() < 1e-15);
        assert!((t[GRID_POINTS - 1] - 2.0).abs() < 1e-12);
        let a = alpha_grid();
        assert_eq!(a[0], 0.9);
        assert!((a[GRID_POINTS - 1] - 0.999).abs() < 1e-12);
    }

    #[test]
    fn l1_distance_cases() {
        let one = ScoreCurve::new(vec![0.0, 0.5, 1.0], vec![1.0; 3]).unwrap();
        let zero = ScoreCurve::new(vec![0.0, 0.5, 1.0], vec![0.0; 3]).unwrap();
        assert_eq!(curve_l1_distance(&one, &one).unwrap(), 0.0);
        assert_eq!(curve_l1_distance(&one, &zero).unwrap(), 1.0);
        let a = ScoreCurve::new(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 2.0]).unwrap();
        let b = ScoreCurve::new(vec![0.0, 1.0, 3.0], vec![1.0, 1.0, 0.0]).unwrap();
        // |a-b| = (1, 1, 2): 0.5*1*(1+1) + 0.5*2*(1+2)
        assert_eq!(curve_l1_distance(&a, &b).unwrap(), 4.0);
        let c = ScoreCurve::new(vec![0.0, 2.0, 3.0], vec![0.0; 3]).unwrap();
        assert!(curve_l1_distance(&a, &c).is_err());
    }

    #[test]
    fn adapter_reverses_order() {
        assert!(normality_from_anomaly(0.2) > normality_from_anomaly(0.8));
        assert!(normality_from_anomaly(50.0) >= 0.0);
        assert_eq!(normality_from_anomaly(0.0), 1.0);
    }

    #[test]
    fn seeded_curves_repeat_bit_exactly() {
        let data = [0.2, 0.4, 0.9];
        let f = |x: &[f64]| x[0] * x[1];
        let a = emmv_scores(&data, &f, &unit(2), 10_000, 4).unwrap();
        let b = emmv_scores(&data, &f, &unit(2), 10_000, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.em_area > 0.0 && a.mv_area > 0.0);
    }

    #[test]
    fn random_score_is_uniform_and_deterministic() {
        let mut rng = RngState::new(4);
        let draws: Vec<f64> = (0..20_000).map(|_| random_score(9, &[rng.normal(), rng.normal()])).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
        assert!(draws.iter().all(|v| (0.0..1.0).contains(v)));
        assert_eq!(random_score(9, &[0.25, 1.0]), random_score(9, &[0.25, 1.0]));
        assert_ne!(random_score(9, &[0.25, 1.0]), random_score(10, &[0.25, 1.0]));
    }
}
