//! Conditional latent-space VAE.
//!
//! Each class `y` owns a unit-variance Gaussian prior `N(mu_y, I)` in latent
//! space, and every sample is regularized toward its own label's component:
//!
//! ```text
//! kl_y(x, z) = -1/2 * sum_i logvar_i(x) + 1/2 * ||z - mu_y||^2
//! loss       = gamma * recon + beta_loss * kl_y
//! ```
//!
//! with `z` the reparameterized sample. The prior means `mu_y` are trained
//! jointly with the network; their variance stays fixed at one.

use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::latent::{LatentSet, Provenance};
use crate::nn::{check_width, LossHistory, TrainConfig};
use crate::numerics::{GradTape, Gradients, ParamId, ParamStore, RngState, Tensor, Var};
use crate::vae::{
    batch_graph, check_bernoulli_range, check_noise, fit_variational, Architecture, LossWeights, ReconKind,
    Regularizer, VariationalNet,
};

pub const CLASS_MEANS_PARAM: &str = "class_means";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClVaeConfig {
    pub architecture: Architecture,
    pub recon: ReconKind,
    pub train: TrainConfig,
    /// Weight on the reconstruction term.
    pub gamma: f64,
    /// Weight on the conditional KL term.
    pub beta_loss: f64,
    /// Prior means start as seeded standard normals times this factor.
    pub mean_init_scale: f64,
}

impl ClVaeConfig {
    pub fn new(architecture: Architecture, recon: ReconKind, train: TrainConfig) -> Self {
        Self {
            architecture,
            recon,
            train,
            gamma: 1.0,
            beta_loss: 1.0,
            mean_init_scale: 3.0,
        }
    }

    pub fn with_weights(mut self, gamma: f64, beta_loss: f64) -> Self {
        self.gamma = gamma;
        self.beta_loss = beta_loss;
        self
    }

    fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        self.train.validate()?;
        if !(self.gamma >= 0.0 && self.beta_loss >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative (gamma {}, beta {})",
                self.gamma, self.beta_loss
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClVaeModel {
    pub params: ParamStore,
    pub config: ClVaeConfig,
    /// Empirical class frequencies of the training data.
    pub class_prior: Vec<f64>,
    pub class_names: Vec<String>,
    pub(crate) net: VariationalNet,
    class_means: ParamId,
}

impl ClVaeModel {
    /// Freshly initialised model; `class_prior` fixes the number of classes.
    pub fn new(config: ClVaeConfig, class_prior: Vec<f64>, class_names: Vec<String>) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = RngState::new(config.train.seed).derive(1);
        let net = VariationalNet::new(&mut params, &config.architecture, config.recon, &mut rng);
        let n = class_prior.len();
        let p = config.architecture.latent_dim;
        let mut mean_rng = RngState::new(config.train.seed).derive(3);
        let init: Vec<f64> = (0..n * p).map(|_| config.mean_init_scale * mean_rng.normal()).collect();
        let class_means = params.register(CLASS_MEANS_PARAM, Tensor::matrix(n, p, init));
        Ok(Self {
            params,
            config,
            class_prior,
            class_names,
            net,
            class_means,
        })
    }

    pub fn from_params(
        config: ClVaeConfig,
        params: ParamStore,
        class_prior: Vec<f64>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let net = VariationalNet::bind(&params, &config.architecture, config.recon)?;
        let class_means = params
            .id_of(CLASS_MEANS_PARAM)
            .ok_or_else(|| Error::Config("model file has no class_means".into()))?;
        if params.get(class_means).rows() != class_prior.len() || class_names.len() != class_prior.len() {
            return Err(Error::Config("class_means rows, prior and class names disagree".into()));
        }
        Ok(Self {
            params,
            config,
            class_prior,
            class_names,
            net,
            class_means,
        })
    }

    /// `[N, latent_dim]` prior means, one row per class.
    pub fn class_means(&self) -> &Tensor {
        self.params.get(self.class_means)
    }

    pub fn class_count(&self) -> usize {
        self.class_prior.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.config.architecture.latent_dim
    }

    pub fn id(&self) -> String {
        format!(
            "clvae(gamma={},beta={},seed={})",
            self.config.gamma, self.config.beta_loss, self.config.train.seed
        )
    }
}

/// `-1/2 * sum_i logvar_i + 1/2 * ||z - mu_y||^2` for a single sample.
/// `mu` only fixes the expected width; the term depends on `logvar`, `z` and
/// the class mean.
pub fn conditional_kl(mu: &[f64], logvar: &[f64], z: &[f64], class_mean: &[f64]) -> Result<f64> {
    let p = mu.len();
    if logvar.len() != p || z.len() != p || class_mean.len() != p {
        return Err(Error::contract("conditional_kl: widths differ"));
    }
    let log_det: f64 = logvar.iter().sum();
    let dist: f64 = z.iter().zip(class_mean).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(-0.5 * log_det + 0.5 * dist)
}

/// `gamma * recon + beta_loss * kl`.
pub fn clvae_loss(gamma: f64, beta_loss: f64, recon: f64, kl: f64) -> Result<f64> {
    if !(gamma >= 0.0 && beta_loss >= 0.0) {
        return Err(Error::contract("loss weights must be non-negative"));
    }
    Ok(gamma * recon + beta_loss * kl)
}

/// Index of the closest prior mean; ties go to the smaller index.
pub fn nearest_prior(z: &[f64], class_means: &Tensor) -> usize {
    let mut best = (0, f64::INFINITY);
    for (y, m) in class_means.row_iter().enumerate() {
        let d: f64 = z.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (y, d);
        }
    }
    best.0
}

/// Batch mean of the conditional KL, recorded on the tape.
pub(crate) fn conditional_kl_graph(
    tape: &mut GradTape,
    logvar: Var,
    z: Var,
    class_means: Var,
    labels: &[usize],
) -> Var {
    let n = labels.len() as f64;
    let targets = tape.gather_rows(class_means, labels);
    let diff = tape.sub(z, targets);
    let sq = tape.square(diff);
    let dist = tape.sum(sq);
    let log_det = tape.sum(logvar);
    let a = tape.scale(dist, 0.5 / n);
    let b = tape.scale(log_det, -0.5 / n);
    tape.add(a, b)
}

struct ClassConditionalPrior {
    class_means: ParamId,
}

impl Regularizer for ClassConditionalPrior {
    fn build(&self, tape: &mut GradTape, store: &ParamStore, _mu: Var, logvar: Var, z: Var, labels: &[usize]) -> Var {
        let means = tape.param(store, self.class_means);
        conditional_kl_graph(tape, logvar, z, means, labels)
    }
}

pub fn train_clvae(dataset: &LabeledDataset, config: &ClVaeConfig) -> Result<(ClVaeModel, LossHistory)> {
    if dataset.is_empty() {
        return Err(Error::contract("cannot train on an empty dataset"));
    }
    if dataset.class_count() < 2 {
        return Err(Error::Config("conditional training needs at least two classes".into()));
    }
    dataset.require_all_classes()?;
    check_width(dataset.features(), config.architecture.input_dim, "train_clvae")?;
    if config.recon == ReconKind::Bernoulli {
        check_bernoulli_range(dataset.features())?;
    }
    let n = dataset.len() as f64;
    let prior = dataset.class_counts().iter().map(|&c| c as f64 / n).collect();
    let mut model = ClVaeModel::new(config.clone(), prior, dataset.class_names().to_vec())?;
    let regularizer = ClassConditionalPrior {
        class_means: model.class_means,
    };
    let history = fit_variational(
        &model.net,
        &mut model.params,
        dataset,
        config.recon,
        &config.train,
        &LossWeights {
            recon: config.gamma,
            regularizer: config.beta_loss,
        },
        &regularizer,
    )?;
    Ok((model, history))
}

/// Weighted objective of one labeled batch under fixed noise, with gradients
/// for the network and the class means.
pub fn batch_objective(model: &ClVaeModel, x: &Tensor, labels: &[usize], eps: &Tensor) -> Result<(f64, Gradients)> {
    check_width(x, model.config.architecture.input_dim, "batch_objective")?;
    check_noise(x, eps, model.latent_dim())?;
    if labels.len() != x.rows() || labels.iter().any(|&y| y >= model.class_count()) {
        return Err(Error::contract("labels must match rows and index known classes"));
    }
    let g = batch_graph(
        &model.net,
        &model.params,
        x.clone(),
        eps.clone(),
        labels,
        model.config.recon,
        &LossWeights {
            recon: model.config.gamma,
            regularizer: model.config.beta_loss,
        },
        &ClassConditionalPrior {
            class_means: model.class_means,
        },
    );
    Ok((g.tape.value(g.loss).item(), g.tape.gradient(g.loss, &model.params)?))
}

/// Posterior-mean embedding; no label is needed at projection time.
pub fn project(model: &ClVaeModel, dataset: &LabeledDataset) -> Result<LatentSet> {
    check_width(dataset.features(), model.config.architecture.input_dim, "project")?;
    LatentSet::new(
        model.net.posterior_means(&model.params, dataset.features()),
        dataset.labels().to_vec(),
        Provenance {
            model_id: model.id(),
            dataset_id: dataset.id.clone(),
        },
    )
}

/// Posterior parameters for each row of `x`.
pub fn encode(model: &ClVaeModel, x: &Tensor) -> Result<(Tensor, Tensor)> {
    check_width(x, model.config.architecture.input_dim, "encode")?;
    let mut tape = GradTape::new();
    let xv = tape.constant(x.clone());
    let (mu, logvar) = model.net.encode(&mut tape, &model.params, xv);
    Ok((tape.value(mu).clone(), tape.value(logvar).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_zero_when_sample_sits_on_class_mean() {
        let m = [1.5, -2.0];
        assert_eq!(conditional_kl(&[0.3, 0.1], &[0.0, 0.0], &m, &m).unwrap(), 0.0);
    }

    #[test]
    fn kl_hand_value() {
        let v = conditional_kl(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gradient_wrt_class_mean_is_negative_offset() {
        let mut store = ParamStore::new();
        let means = store.register("m", Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 3.0]));
        let z = Tensor::matrix(1, 2, vec![1.25, 0.5]);
        let mut tape = GradTape::new();
        let zv = tape.constant(z.clone());
        let lv = tape.constant(Tensor::matrix(1, 2, vec![0.1, -0.3]));
        let mv = tape.param(&store, means);
        let kl = conditional_kl_graph(&mut tape, lv, zv, mv, &[0]);
        let g = tape.gradient(kl, &store).unwrap();
        let got = g.get(means);
        assert!((got.data()[0] - -(1.25 - 0.5)).abs() < 1e-15);
        assert!((got.data()[1] - -(0.5 - -1.0)).abs() < 1e-15);
        assert_eq!(&got.data()[2..], &[0.0, 0.0]);
    }

    #[test]
    fn loss_weighting() {
        assert_eq!(clvae_loss(1.0, 1.0, 2.0, 1.0).unwrap(), 3.0);
        assert!((clvae_loss(0.3, 1.0, 2.0, 1.0).unwrap() - 1.6).abs() < 1e-15);
        assert_eq!(clvae_loss(0.0, 1.0, 2.0, 1.0).unwrap(), 1.0);
        assert!(clvae_loss(-1.0, 1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn nearest_prior_rules() {
        let means = Tensor::matrix(4, 2, vec![0.0, 0.0, 2.0, 0.0, 5.0, 5.0, -3.0, 1.0]);
        assert_eq!(nearest_prior(&[-3.0, 1.0], &means), 3);
        assert_eq!(nearest_prior(&[1.0, 0.0], &means), 0);
    }

    #[test]
    fn translation_invariance() {
        let (lv, z, m) = ([0.2, -0.4], [1.0, 2.0], [0.5, -1.0]);
        let base = conditional_kl(&[0.0, 0.0], &lv, &z, &m).unwrap();
        let shift = [3.5, -7.25];
        let zt: Vec<f64> = z.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let mt: Vec<f64> = m.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let moved = conditional_kl(&shift, &lv, &zt, &mt).unwrap();
        assert!((base - moved).abs() < 1e-12);
    }
}
