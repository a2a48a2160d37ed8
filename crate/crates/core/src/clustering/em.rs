use nalgebra::DMatrix;

use super::{check_fit_args, kmeans, ClusterAssignment, ClusterParams, KMEANS_MAX_ITER, KMEANS_TOL};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const EM_MAX_ITER: usize = 300;
/// Relative change in total log-likelihood that counts as converged.
pub const EM_TOL: f64 = 1e-6;
const RIDGE: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// A Gaussian component prepared for repeated density evaluation.
struct Component {
    mean: Vec<f64>,
    cov: DMatrix<f64>,
    /// Inverse of the lower Cholesky factor.
    l_inv: DMatrix<f64>,
    log_norm: f64,
}

impl Component {
    /// Factorizes `cov`, adding `RIDGE * I` until it is positive definite.
    fn new(mean: Vec<f64>, mut cov: DMatrix<f64>) -> Result<Self> {
        let p = mean.len();
        for _ in 0..12 {
            if let Some(chol) = cov.clone().cholesky() {
                let l = chol.l();
                let l_inv = l
                    .clone()
                    .try_inverse()
                    .ok_or_else(|| Error::Numeric("triangular inverse failed".into()))?;
                let log_det: f64 = 2.0 * (0..p).map(|i| l[(i, i)].ln()).sum::<f64>();
                return Ok(Self {
                    mean,
                    cov,
                    l_inv,
                    log_norm: -0.5 * (p as f64 * LN_2PI + log_det),
                });
            }
            log::warn!("singular covariance, adding {RIDGE:e} * I");
            for i in 0..p {
                cov[(i, i)] += RIDGE;
            }
        }
        Err(Error::Numeric("covariance stayed singular after regularization".into()))
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let p = x.len();
        let mut maha = 0.0;
        for i in 0..p {
            let mut y = 0.0;
            for j in 0..=i {
                y += self.l_inv[(i, j)] * (x[j] - self.mean[j]);
            }
            maha += y * y;
        }
        self.log_norm - 0.5 * maha
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Weighted mean and MLE covariance with weights `w` (sum `total`).
fn weighted_stats(points: &Tensor, w: &[f64], total: f64) -> (Vec<f64>, DMatrix<f64>) {
    let p = points.cols();
    let mut mean = vec![0.0; p];
    for (x, &wi) in points.row_iter().zip(w) {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += wi * v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut cov = DMatrix::zeros(p, p);
    for (x, &wi) in points.row_iter().zip(w) {
        for a in 0..p {
            let da = x[a] - mean[a];
            for b in 0..=a {
                cov[(a, b)] += wi * da * (x[b] - mean[b]);
            }
        }
    }
    for a in 0..p {
        for b in 0..=a {
            cov[(a, b)] /= total;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    (mean, cov)
}

/// Full-covariance EM started from a k-means partition with the same seed.
/// Stops when the relative log-likelihood change is at most `tol`. Points are
/// assigned to their most responsible component (ties to the lower index).
pub fn em_gmm(points: &Tensor, k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<ClusterAssignment> {
    check_fit_args(points, k)?;
    let n = points.rows();
    let init = kmeans(points, k, seed, KMEANS_MAX_ITER, KMEANS_TOL)?;

    let mut weights = vec![0.0; k];
    let mut comps = Vec::with_capacity(k);
    for j in 0..k {
        let w: Vec<f64> = init.assignment.iter().map(|&a| f64::from(a == j)).collect();
        let count: f64 = w.iter().sum();
        weights[j] = count / n as f64;
        let (mean, cov) = weighted_stats(points, &w, count);
        comps.push(Component::new(mean, cov)?);
    }

    let mut resp = vec![0.0; n * k];
    let mut trace: Vec<f64> = Vec::new();
    let mut logp = vec![0.0; k];
    for iter in 0..max_iter.max(1) {
        // E-step
        let mut ll = 0.0;
        for (i, x) in points.row_iter().enumerate() {
            for j in 0..k {
                logp[j] = weights[j].ln() + comps[j].log_density(x);
            }
            let lse = log_sum_exp(&logp);
            ll += lse;
            for j in 0..k {
                resp[i * k + j] = (logp[j] - lse).exp();
            }
        }
        if !ll.is_finite() {
            return Err(Error::Numeric(format!("EM log-likelihood became {ll} at iteration {iter}")));
        }
        let converged = trace.last().is_some_and(|&prev| (ll - prev).abs() <= tol * prev.abs());
        trace.push(ll);
        if converged || iter + 1 == max_iter {
            break;
        }
        // M-step
        for j in 0..k {
            let w: Vec<f64> = (0..n).map(|i| resp[i * k + j]).collect();
            let nk: f64 = w.iter().sum();
            if nk < 1e-10 {
                // Component lost all mass: keep its previous shape.
                weights[j] = 0.0;
                continue;
            }
            weights[j] = nk / n as f64;
            let (mean, cov) = weighted_stats(points, &w, nk);
            comps[j] = Component::new(mean, cov)?;
        }
        let wsum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= wsum);
    }

    let assignment = (0..n)
        .map(|i| {
            let row = &resp[i * k..(i + 1) * k];
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    let p = points.cols();
    let means = Tensor::from_rows(&comps.iter().map(|c| c.mean.clone()).collect::<Vec<_>>())?;
    let covariances = comps
        .iter()
        .map(|c| Tensor::matrix(p, p, c.cov.transpose().as_slice().to_vec()))
        .collect();
    Ok(ClusterAssignment {
        assignment,
        k,
        params: ClusterParams::Gmm {
            weights,
            means,
            covariances,
        },
        objective: *trace.last().unwrap(),
        objective_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;

    fn two_gaussians(n: usize) -> Tensor {
        let mut rng = RngState::new(17);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let (a, b) = (rng.normal(), rng.normal());
                if i % 2 == 0 {
                    vec![-4.0 + a, 1.0 + 0.5 * b + 0.3 * a]
                } else {
                    vec![5.0 + 0.7 * a, -2.0 + b]
                }
            })
            .collect();
        Tensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn log_likelihood_is_non_decreasing() {
        let pts = two_gaussians(400);
        let fit = em_gmm(&pts, 4, 3, 100, 0.0).unwrap();
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{:?}", fit.objective_trace);
        }
    }

    #[test]
    fn recovers_separated_means() {
        let pts = two_gaussians(2000);
        let fit = em_gmm(&pts, 2, 1, EM_MAX_ITER, EM_TOL).unwrap();
        let ClusterParams::Gmm { weights, means, .. } = &fit.params else { panic!() };
        assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let mut rows: Vec<&[f64]> = means.row_iter().collect();
        rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert!(sq_dist_(rows[0], &[-4.0, 1.0]).sqrt() < 0.2, "{rows:?}");
        assert!(sq_dist_(rows[1], &[5.0, -2.0]).sqrt() < 0.2, "{rows:?}");
    }

    fn sq_dist_(a: &[f64], b: &[f64]) -> f64 {
        super::super::sq_dist(a, b)
    }

    #[test]
    fn single_component_matches_sample_statistics() {
        let pts = two_gaussians(300);
        let fit = em_gmm(&pts, 1, 0, 50, EM_TOL).unwrap();
        let ClusterParams::Gmm { means, covariances, .. } = &fit.params else { panic!() };
        let mean = pts.column_means();
        let n = pts.rows() as f64;
        for a in 0..2 {
            assert!((means.row(0)[a] - mean[a]).abs() < 1e-10);
            for b in 0..2 {
                let c: f64 = pts.row_iter().map(|x| (x[a] - mean[a]) * (x[b] - mean[b])).sum::<f64>() / n;
                assert!((covariances[0].data()[a * 2 + b] - c).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn duplicate_points_are_regularized() {
        let pts = Tensor::matrix(4, 2, vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 3.0, 3.0]);
        let fit = em_gmm(&pts, 2, 0, 20, EM_TOL).unwrap();
        assert_eq!(fit.assignment[0], fit.assignment[1]);
        assert_ne!(fit.assignment[0], fit.assignment[3]);
    }
}
