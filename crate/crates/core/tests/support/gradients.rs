//! Finite-difference checks of both training objectives on random small
//! networks, batches and noise draws.

use clvae_core::clvae::{self, ClVaeConfig, ClVaeModel};
use clvae_core::nn::TrainConfig;
use clvae_core::numerics::{check_gradients, RngState, Tensor};
use clvae_core::vae::{self, Architecture, ReconKind, VaeConfig, VaeModel};

pub const STEP: f64 = 1e-5;

pub struct Case {
    pub x: Tensor,
    pub eps: Tensor,
    pub labels: Vec<usize>,
    pub recon: ReconKind,
    pub arch: Architecture,
}

pub fn case(seed: u64) -> Case {
    let mut rng = RngState::new(seed);
    let rows = 3 + rng.below(4);
    let input = 2 + rng.below(5);
    let latent = 1 + rng.below(3);
    let hidden = if rng.below(3) == 0 { vec![] } else { vec![2 + rng.below(4)] };
    let recon = if seed % 2 == 0 { ReconKind::Bernoulli } else { ReconKind::Gaussian };
    let x: Vec<f64> = (0..rows * input)
        .map(|_| match recon {
            ReconKind::Bernoulli => rng.uniform(),
            ReconKind::Gaussian => rng.normal(),
        })
        .collect();
    let eps = (0..rows * latent).map(|_| rng.normal()).collect();
    Case {
        x: Tensor::matrix(rows, input, x),
        eps: Tensor::matrix(rows, latent, eps),
        labels: (0..rows).map(|i| i % 3).collect(),
        recon,
        arch: Architecture::new(input, hidden, latent),
    }
}

pub fn train(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 1,
        batch_size: 4,
        learning_rate: 1e-3,
        seed,
    }
}

/// Worst relative error of the VAE objective over `cases` random points.
pub fn vae_worst(cases: u64) -> f64 {
    (0..cases)
        .map(|seed| {
            let c = case(seed);
            let model = VaeModel::new(VaeConfig::new(c.arch.clone(), c.recon, train(seed))).unwrap();
            let (_, grads) = vae::batch_objective(&model, &c.x, &c.eps).unwrap();
            check_gradients(&model.params, &grads, STEP, |p| {
                let mut m = model.clone();
                m.params = p.clone();
                vae::batch_objective(&m, &c.x, &c.eps).unwrap().0
            })
            .max_relative_error
        })
        .fold(0.0, f64::max)
}

/// Same for the CL-VAE objective, cycling the reconstruction weight.
pub fn clvae_worst(cases: u64) -> f64 {
    (0..cases)
        .map(|seed| {
            let c = case(1000 + seed);
            let gamma = [0.3, 1.0, 2.5][seed as usize % 3];
            let config = ClVaeConfig::new(c.arch.clone(), c.recon, train(seed)).with_weights(gamma, 1.0);
            let names = vec!["a".into(), "b".into(), "c".into()];
            let model = ClVaeModel::new(config, vec![1.0 / 3.0; 3], names).unwrap();
            let (_, grads) = clvae::batch_objective(&model, &c.x, &c.labels, &c.eps).unwrap();
            check_gradients(&model.params, &grads, STEP, |p| {
                let mut m = model.clone();
                m.params = p.clone();
                clvae::batch_objective(&m, &c.x, &c.labels, &c.eps).unwrap().0
            })
            .max_relative_error
        })
        .fold(0.0, f64::max)
}
