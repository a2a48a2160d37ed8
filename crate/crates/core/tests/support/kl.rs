//! Closed-form KL against a stratified Monte Carlo estimate.

use statrs::distribution::{ContinuousCDF, Normal};

use clvae_core::numerics::{RngState, Tensor};
use clvae_core::vae::kl_standard;

pub struct KlComparison {
    pub closed_form: f64,
    pub monte_carlo: f64,
}

impl KlComparison {
    /// Relative error, or absolute error below `1e-3`.
    pub fn within(&self, rel: f64, abs: f64) -> bool {
        let gap = (self.closed_form - self.monte_carlo).abs();
        if self.closed_form < 1e-3 {
            gap < abs
        } else {
            gap / self.closed_form < rel
        }
    }
}

/// `pairs` random univariate `(mu, sigma^2)`; each MC estimate averages
/// `log q(z) - log p(z)` over `draws` samples of `q = N(mu, sigma^2)`, one
/// uniformly placed draw in each of `draws` equal-probability strata.
pub fn kl_comparisons(pairs: usize, draws: usize, seed: u64) -> Vec<KlComparison> {
    let mut rng = RngState::new(seed);
    let std_normal = Normal::standard();
    (0..pairs)
        .map(|_| {
            let mu = rng.uniform_range(-2.0, 2.0);
            let logvar = rng.uniform_range(-2.0, 2.0);
            let sigma = (0.5 * logvar).exp();
            let closed_form = kl_standard(&Tensor::vector(vec![mu]), &Tensor::vector(vec![logvar])).unwrap();
            let mut sum = 0.0;
            for i in 0..draws {
                let e = std_normal.inverse_cdf((i as f64 + rng.uniform().max(f64::EPSILON)) / draws as f64);
                let z = mu + sigma * e;
                // log N(z; mu, s^2) - log N(z; 0, 1); the 2 pi terms cancel.
                sum += -0.5 * logvar - 0.5 * e * e + 0.5 * z * z;
            }
            KlComparison {
                closed_form,
                monte_carlo: sum / draws as f64,
            }
        })
        .collect()
}
