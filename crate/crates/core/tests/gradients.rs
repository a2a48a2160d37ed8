mod support;

use clvae_core::numerics::Tensor;
use clvae_core::vae::{self, VaeConfig, VaeModel};
use support::gradients::{case, clvae_worst, train, vae_worst};

#[test]
fn vae_objective_matches_finite_differences() {
    let worst = vae_worst(100);
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn clvae_objective_matches_finite_differences() {
    let worst = clvae_worst(100);
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn noise_shape_is_checked() {
    let c = case(0);
    let model = VaeModel::new(VaeConfig::new(c.arch.clone(), c.recon, train(0))).unwrap();
    let wrong = Tensor::zeros(&[c.x.rows() + 1, c.arch.latent_dim]);
    assert!(vae::batch_objective(&model, &c.x, &wrong).is_err());
}
