use super::{check_fit_args, sq_dist, ClusterAssignment, ClusterParams};
use crate::error::Result;
use crate::numerics::{RngState, Tensor};

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance from the nearest chosen centre.
pub(crate) fn plus_plus_init(points: &Tensor, k: usize, rng: &mut RngState) -> Vec<Vec<f64>> {
    let n = points.rows();
    let mut centers = vec![points.row(rng.below(n)).to_vec()];
    let mut nearest: Vec<f64> = points.row_iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // Every point coincides with a centre already.
            rng.below(n)
        };
        let c = points.row(next).to_vec();
        for (d, p) in nearest.iter_mut().zip(points.row_iter()) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

fn nearest_center(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Lloyd iterations from k-means++ seeding. Stops once no centroid moves by
/// more than `tol` (Euclidean) or after `max_iter` updates. The objective
/// trace holds the inertia after every assignment step.
pub fn kmeans(points: &Tensor, k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<ClusterAssignment> {
    check_fit_args(points, k)?;
    let (n, dim) = (points.rows(), points.cols());
    let mut rng = RngState::new(seed);
    let mut centers = plus_plus_init(points, k, &mut rng);
    let mut assignment = vec![0usize; n];
    let mut dists = vec![0.0; n];
    let mut trace = Vec::new();

    for _ in 0..max_iter.max(1) {
        for (i, p) in points.row_iter().enumerate() {
            let (j, d) = nearest_center(p, &centers);
            assignment[i] = j;
            dists[i] = d;
        }
        trace.push(dists.iter().sum::<f64>());

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.row_iter().zip(&assignment) {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            let new_center: Vec<f64> = if counts[j] > 0 {
                sums[j].iter().map(|s| s / counts[j] as f64).collect()
            } else {
                // Empty cluster: take over the point worst served by its centroid.
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .unwrap();
                dists[far] = 0.0;
                points.row(far).to_vec()
            };
            shift = shift.max(sq_dist(&new_center, &centers[j]).sqrt());
            centers[j] = new_center;
        }
        if shift < tol {
            break;
        }
    }
    // Final assignment against the final centroids.
    for (i, p) in points.row_iter().enumerate() {
        let (j, d) = nearest_center(p, &centers);
        assignment[i] = j;
        dists[i] = d;
    }
    let inertia: f64 = dists.iter().sum();
    if trace.last().map_or(true, |&last| last != inertia) {
        trace.push(inertia);
    }
    Ok(ClusterAssignment {
        assignment,
        k,
        params: ClusterParams::KMeans {
            centroids: Tensor::from_rows(&centers)?,
        },
        objective: inertia,
        objective_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_blobs() -> (Tensor, Vec<usize>) {
        let mut rng = RngState::new(4);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (label, cx) in [(0, -10.0), (1, 10.0)] {
            for _ in 0..40 {
                rows.push(vec![cx + rng.normal(), rng.normal()]);
                labels.push(label);
            }
        }
        (Tensor::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn separates_two_blobs_exactly() {
        let (pts, labels) = two_blobs();
        let fit = kmeans(&pts, 2, 1, 100, 1e-9).unwrap();
        let first = fit.assignment[0];
        for (a, l) in fit.assignment.iter().zip(&labels) {
            assert_eq!(*a == first, *l == 0);
        }
    }

    #[test]
    fn single_cluster_centroid_is_the_mean() {
        let (pts, _) = two_blobs();
        let fit = kmeans(&pts, 1, 3, 10, 1e-12).unwrap();
        let ClusterParams::KMeans { centroids } = &fit.params else { panic!() };
        for (c, m) in centroids.row(0).iter().zip(pts.column_means()) {
            assert!((c - m).abs() < 1e-12);
        }
    }

    #[test]
    fn inertia_never_increases() {
        let mut rng = RngState::new(8);
        let rows: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.normal(), rng.normal() * 2.0]).collect();
        let pts = Tensor::from_rows(&rows).unwrap();
        let fit = kmeans(&pts, 5, 2, 100, 0.0).unwrap();
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", fit.objective_trace);
        }
    }

    #[test]
    fn too_many_clusters_is_a_contract_violation() {
        let pts = Tensor::matrix(2, 1, vec![0.0, 1.0]);
        assert!(kmeans(&pts, 3, 0, 10, 1e-6).is_err());
    }
}
