use proptest::prelude::*;

use clvae_core::anomaly::LocalOutlierFactor;
use clvae_core::anomaly::isolation_forest;
use clvae_core::metrics::{completeness, homogeneity, v_score_labels, ContingencyTable};
use clvae_core::numerics::Tensor;
use clvae_core::vae::kl_standard;

fn labels(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..k, n)
}

fn cloud() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (8usize..40, 1usize..4).prop_flat_map(|(n, d)| prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), n))
}

proptest! {
    #[test]
    fn kl_is_non_negative(
        mu in prop::collection::vec(-10.0f64..10.0, 1..20),
        lv_seed in prop::collection::vec(-6.0f64..6.0, 20),
    ) {
        let logvar: Vec<f64> = lv_seed[..mu.len()].to_vec();
        let kl = kl_standard(&Tensor::vector(mu.clone()), &Tensor::vector(logvar)).unwrap();
        prop_assert!(kl >= 0.0, "kl {kl}");
        let zero = kl_standard(&Tensor::vector(vec![0.0; mu.len()]), &Tensor::vector(vec![0.0; mu.len()])).unwrap();
        prop_assert_eq!(zero, 0.0);
    }

    #[test]
    fn metrics_ignore_label_names(
        (classes, clusters) in (1usize..60).prop_flat_map(|n| (labels(n, 5), labels(n, 6))),
        offset in 1usize..5,
    ) {
        let base = v_score_labels(&classes, &clusters, 1.0).unwrap();
        // Permute cluster ids cyclically and class ids by reversal.
        let perm_clusters: Vec<usize> = clusters.iter().map(|&k| (k + offset) % 6).collect();
        let perm_classes: Vec<usize> = classes.iter().map(|&c| 4 - c).collect();
        let moved = v_score_labels(&perm_classes, &perm_clusters, 1.0).unwrap();
        prop_assert!((base - moved).abs() < 1e-12, "{base} vs {moved}");
    }

    #[test]
    fn completeness_is_transposed_homogeneity(
        (classes, clusters) in (1usize..60).prop_flat_map(|n| (labels(n, 4), labels(n, 4))),
    ) {
        let t = ContingencyTable::from_labels(&classes, &clusters).unwrap();
        let swapped = ContingencyTable::from_labels(&clusters, &classes).unwrap();
        prop_assert_eq!(completeness(&t).unwrap(), homogeneity(&swapped).unwrap());
        let h = homogeneity(&t).unwrap();
        prop_assert!((0.0..=1.0).contains(&h));
    }

    #[test]
    fn lof_is_translation_invariant(rows in cloud(), shift in prop::collection::vec(-50.0f64..50.0, 3), k in 1usize..6) {
        let d = rows[0].len();
        let moved: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
        let a = LocalOutlierFactor::fit(&Tensor::from_rows(&rows).unwrap(), k).unwrap();
        let b = LocalOutlierFactor::fit(&Tensor::from_rows(&moved).unwrap(), k).unwrap();
        for (x, y) in a.train_scores().iter().zip(b.train_scores()) {
            prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0), "{x} vs {y} (dim {d})");
        }
    }

    #[test]
    fn isolation_scores_lie_in_unit_interval(rows in cloud(), seed in any::<u64>()) {
        let n = rows.len();
        let s = isolation_forest(&Tensor::from_rows(&rows).unwrap(), 20, 16.min(n), seed).unwrap();
        prop_assert!(s.scores.iter().all(|v| *v > 0.0 && *v <= 1.0));
    }
}
