//! Variational autoencoder with a single standard-normal prior.
//!
//! The encoder maps `x` through a tanh trunk into two linear heads, the
//! posterior mean `mu` and the log-variance `logvar` (so the variance is
//! positive by construction). Training draws one `eps ~ N(0, I)` per sample
//! per step and minimizes
//!
//! ```text
//! loss = recon(x, decoder(mu + exp(logvar / 2) * eps)) + kl_weight * KL(q(z|x) || N(0, I))
//! ```
//!
//! averaged over the mini-batch, where the KL term has the closed form
//! `-1/2 * sum_j (1 + logvar_j - mu_j^2 - exp(logvar_j))`.

use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::latent::{LatentSet, Provenance};
use crate::nn::{check_width, epoch_batches, Activation, Dense, LossHistory, Mlp, TrainConfig};
use crate::numerics::{Adam, GradTape, Gradients, ParamStore, RngState, Tensor, Var};

/// Probabilities are clipped into `[CLIP, 1 - CLIP]` before taking logs.
pub const BERNOULLI_CLIP: f64 = 1e-7;

/// Rows per forward pass when projecting a dataset.
const PROJECTION_CHUNK: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconKind {
    /// Binary cross-entropy against sigmoid outputs; data must lie in `[0, 1]`.
    Bernoulli,
    /// Squared error against linear outputs.
    Gaussian,
}

impl ReconKind {
    pub fn output_activation(self) -> Activation {
        match self {
            ReconKind::Bernoulli => Activation::Sigmoid,
            ReconKind::Gaussian => Activation::Identity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, latent_dim: usize) -> Self {
        Self {
            input_dim,
            hidden,
            latent_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub architecture: Architecture,
    pub recon: ReconKind,
    pub train: TrainConfig,
    /// Multiplier on the KL term; 1 is the ordinary ELBO.
    pub kl_weight: f64,
}

impl VaeConfig {
    pub fn new(architecture: Architecture, recon: ReconKind, train: TrainConfig) -> Self {
        Self {
            architecture,
            recon,
            train,
            kl_weight: 1.0,
        }
    }

    /// 784 -> 256 -> (2, 2) encoder, 2 -> 256 -> 784 Bernoulli decoder.
    pub fn mnist_default(seed: u64) -> Self {
        Self::new(
            Architecture::new(784, vec![256], 2),
            ReconKind::Bernoulli,
            TrainConfig {
                seed,
                ..TrainConfig::default()
            },
        )
    }
}

/// Encoder trunk, the two posterior heads and the decoder.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct VariationalNet {
    pub trunk: Option<Mlp>,
    pub mu_head: Dense,
    pub logvar_head: Dense,
    pub decoder: Mlp,
}

impl VariationalNet {
    pub fn new(store: &mut ParamStore, arch: &Architecture, recon: ReconKind, rng: &mut RngState) -> Self {
        let mut trunk_sizes = vec![arch.input_dim];
        trunk_sizes.extend(&arch.hidden);
        let trunk = (trunk_sizes.len() > 1)
            .then(|| Mlp::new(store, "encoder", &trunk_sizes, Activation::Tanh, Activation::Tanh, rng));
        let head_in = *trunk_sizes.last().unwrap();
        let mu_head = Dense::new(store, "mu", head_in, arch.latent_dim, Activation::Identity, rng);
        let logvar_head = Dense::new(store, "logvar", head_in, arch.latent_dim, Activation::Identity, rng);
        let mut dec_sizes = vec![arch.latent_dim];
        dec_sizes.extend(arch.hidden.iter().rev());
        dec_sizes.push(arch.input_dim);
        let decoder = Mlp::new(store, "decoder", &dec_sizes, Activation::Tanh, recon.output_activation(), rng);
        Self {
            trunk,
            mu_head,
            logvar_head,
            decoder,
        }
    }

    /// Rebinds a network to parameters loaded from disk.
    pub fn bind(store: &ParamStore, arch: &Architecture, recon: ReconKind) -> Result<Self> {
        let depth = arch.hidden.len();
        let trunk = (depth > 0)
            .then(|| Mlp::bind(store, "encoder", depth, Activation::Tanh, Activation::Tanh))
            .transpose()?;
        Ok(Self {
            trunk,
            mu_head: Dense::bind(store, "mu", Activation::Identity)?,
            logvar_head: Dense::bind(store, "logvar", Activation::Identity)?,
            decoder: Mlp::bind(store, "decoder", depth + 1, Activation::Tanh, recon.output_activation())?,
        })
    }

    pub fn encode(&self, tape: &mut GradTape, store: &ParamStore, x: Var) -> (Var, Var) {
        let h = match &self.trunk {
            Some(t) => t.forward(tape, store, x),
            None => x,
        };
        (
            self.mu_head.forward(tape, store, h),
            self.logvar_head.forward(tape, store, h),
        )
    }

    pub fn decode(&self, tape: &mut GradTape, store: &ParamStore, z: Var) -> Var {
        self.decoder.forward(tape, store, z)
    }

    /// Posterior means of every row, computed in chunks.
    pub fn posterior_means(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        let rows: Vec<usize> = (0..x.rows()).collect();
        let mut out = Vec::new();
        let mut latent = 0;
        for chunk in rows.chunks(PROJECTION_CHUNK) {
            let mut tape = GradTape::new();
            let xv = tape.constant(x.select_rows(chunk));
            let (mu, _) = self.encode(&mut tape, store, xv);
            latent = tape.value(mu).cols();
            out.extend_from_slice(tape.value(mu).data());
        }
        Tensor::matrix(x.rows(), latent, out)
    }
}

/// `z = mu + exp(logvar / 2) * eps`, recorded on the tape.
pub(crate) fn reparameterize_graph(tape: &mut GradTape, mu: Var, logvar: Var, eps: Var) -> Var {
    let half = tape.scale(logvar, 0.5);
    let sigma = tape.exp(half);
    let noise = tape.mul(sigma, eps);
    tape.add(mu, noise)
}

/// Batch mean of the per-sample reconstruction term.
pub(crate) fn recon_graph(tape: &mut GradTape, x: Var, decoded: Var, kind: ReconKind) -> Var {
    let n = tape.value(x).rows() as f64;
    let total = match kind {
        ReconKind::Bernoulli => {
            let p = tape.clamp(decoded, BERNOULLI_CLIP, 1.0 - BERNOULLI_CLIP);
            let log_p = tape.log(p);
            let q = tape.affine(p, -1.0, 1.0);
            let log_q = tape.log(q);
            let x_not = tape.affine(x, -1.0, 1.0);
            let a = tape.mul(x, log_p);
            let b = tape.mul(x_not, log_q);
            let ll = tape.add(a, b);
            let s = tape.sum(ll);
            tape.scale(s, -1.0)
        }
        ReconKind::Gaussian => {
            let diff = tape.sub(x, decoded);
            let sq = tape.square(diff);
            tape.sum(sq)
        }
    };
    tape.scale(total, 1.0 / n)
}

/// Batch mean of the closed-form `KL(N(mu, exp(logvar)) || N(0, I))`.
pub(crate) fn kl_standard_graph(tape: &mut GradTape, mu: Var, logvar: Var) -> Var {
    let (n, p) = {
        let v = tape.value(mu);
        (v.rows() as f64, v.cols() as f64)
    };
    let mu_sq = tape.square(mu);
    let var = tape.exp(logvar);
    let a = tape.add(mu_sq, var);
    let b = tape.sub(a, logvar);
    let s = tape.sum(b);
    // 1/2 * (sum(mu^2 + var - logvar) - n p) / n
    tape.affine(s, 0.5 / n, -0.5 * p)
}

pub(crate) fn check_bernoulli_range(x: &Tensor) -> Result<()> {
    if let Some(v) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::contract(format!(
            "bernoulli reconstruction needs data in [0, 1], found {v}"
        )));
    }
    Ok(())
}

/// What a variational training step adds next to the reconstruction term.
pub(crate) trait Regularizer {
    /// Batch-mean regularizer given the posterior and sampled latent.
    fn build(&self, tape: &mut GradTape, store: &ParamStore, mu: Var, logvar: Var, z: Var, labels: &[usize]) -> Var;
}

pub(crate) struct StandardNormalPrior;

impl Regularizer for StandardNormalPrior {
    fn build(&self, tape: &mut GradTape, _: &ParamStore, mu: Var, logvar: Var, _: Var, _: &[usize]) -> Var {
        kl_standard_graph(tape, mu, logvar)
    }
}

pub(crate) struct LossWeights {
    pub recon: f64,
    pub regularizer: f64,
}

pub(crate) struct BatchGraph {
    pub tape: GradTape,
    pub loss: Var,
    pub rec: Var,
    pub reg: Var,
}

/// Weighted loss of one batch for fixed reparameterization noise.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_graph(
    net: &VariationalNet,
    store: &ParamStore,
    x: Tensor,
    eps: Tensor,
    labels: &[usize],
    recon: ReconKind,
    weights: &LossWeights,
    regularizer: &dyn Regularizer,
) -> BatchGraph {
    let mut tape = GradTape::new();
    let x = tape.constant(x);
    let (mu, logvar) = net.encode(&mut tape, store, x);
    let eps = tape.constant(eps);
    let z = reparameterize_graph(&mut tape, mu, logvar, eps);
    let decoded = net.decode(&mut tape, store, z);
    let rec = recon_graph(&mut tape, x, decoded, recon);
    let reg = regularizer.build(&mut tape, store, mu, logvar, z, labels);
    let rec_w = tape.scale(rec, weights.recon);
    let reg_w = tape.scale(reg, weights.regularizer);
    let loss = tape.add(rec_w, reg_w);
    BatchGraph { tape, loss, rec, reg }
}

/// Shared mini-batch loop for the VAE and CL-VAE.
pub(crate) fn fit_variational(
    net: &VariationalNet,
    store: &mut ParamStore,
    dataset: &LabeledDataset,
    recon: ReconKind,
    train: &TrainConfig,
    weights: &LossWeights,
    regularizer: &dyn Regularizer,
) -> Result<LossHistory> {
    let x_all = dataset.features();
    let latent_dim = net.mu_head.outputs(store);
    let mut rng = RngState::new(train.seed).derive(2);
    let mut opt = Adam::new(store, train.learning_rate);
    let mut history = LossHistory::default();

    for epoch in 0..train.epochs {
        let (mut total, mut rec_sum, mut reg_sum) = (0.0, 0.0, 0.0);
        for (b, batch) in epoch_batches(dataset.len(), train.batch_size, &mut rng).iter().enumerate() {
            let eps_data: Vec<f64> = (0..batch.len() * latent_dim).map(|_| rng.normal()).collect();
            let eps = Tensor::matrix(batch.len(), latent_dim, eps_data);
            let labels: Vec<usize> = batch.iter().map(|&i| dataset.labels()[i]).collect();
            let BatchGraph { tape, loss, rec, reg } = batch_graph(
                net,
                store,
                x_all.select_rows(batch),
                eps,
                &labels,
                recon,
                weights,
                regularizer,
            );

            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    value,
                });
            }
            let grads = tape.gradient(loss, store)?;
            opt.step(store, &grads);

            let w = batch.len() as f64;
            total += value * w;
            rec_sum += tape.value(rec).item() * w;
            reg_sum += tape.value(reg).item() * w;
        }
        let n = dataset.len() as f64;
        history.total.push(total / n);
        history.reconstruction.push(rec_sum / n);
        history.regularizer.push(reg_sum / n);
        log::debug!("epoch {epoch}: loss {:.4}", total / n);
    }
    Ok(history)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    pub params: ParamStore,
    pub config: VaeConfig,
    pub(crate) net: VariationalNet,
}

impl VaeModel {
    pub fn new(config: VaeConfig) -> Result<Self> {
        config.architecture.validate()?;
        let mut params = ParamStore::new();
        let mut rng = RngState::new(config.train.seed).derive(1);
        let net = VariationalNet::new(&mut params, &config.architecture, config.recon, &mut rng);
        Ok(Self { params, config, net })
    }

    /// Rebuilds a model from stored parameters.
    pub fn from_params(config: VaeConfig, params: ParamStore) -> Result<Self> {
        let net = VariationalNet::bind(&params, &config.architecture, config.recon)?;
        Ok(Self { params, config, net })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.architecture.latent_dim
    }

    pub fn id(&self) -> String {
        format!("vae(seed={})", self.config.train.seed)
    }

    /// Decoder output for latent points `z` (`[n, latent_dim]`).
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        check_width(z, self.latent_dim(), "decode")?;
        let mut tape = GradTape::new();
        let zv = tape.constant(z.clone());
        let out = self.net.decode(&mut tape, &self.params, zv);
        Ok(tape.value(out).clone())
    }
}

/// Posterior parameters `(mu, logvar)` for each row of `x`.
pub fn encode(model: &VaeModel, x: &Tensor) -> Result<(Tensor, Tensor)> {
    check_width(x, model.config.architecture.input_dim, "encode")?;
    let mut tape = GradTape::new();
    let xv = tape.constant(x.clone());
    let (mu, logvar) = model.net.encode(&mut tape, &model.params, xv);
    Ok((tape.value(mu).clone(), tape.value(logvar).clone()))
}

/// `z = mu + exp(logvar / 2) * eps`.
pub fn reparameterize(mu: &Tensor, logvar: &Tensor, eps: &Tensor) -> Result<Tensor> {
    let sigma = logvar.map(|v| (0.5 * v).exp());
    mu.add(&sigma.mul(eps)?)
}

/// Closed-form `KL(N(mu, diag(exp(logvar))) || N(0, I))`, summed over every
/// entry (for a batch this is the sum of the per-sample divergences).
pub fn kl_standard(mu: &Tensor, logvar: &Tensor) -> Result<f64> {
    if mu.shape() != logvar.shape() {
        return Err(Error::contract("kl_standard: mu and logvar shapes differ"));
    }
    Ok(-0.5
        * mu
            .data()
            .iter()
            .zip(logvar.data())
            .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
            .sum::<f64>())
}

/// Per-sample reconstruction term, averaged over rows.
pub fn recon_term(x: &Tensor, decoded: &Tensor, kind: ReconKind) -> Result<f64> {
    if x.shape() != decoded.shape() {
        return Err(Error::contract("reconstruction: x and decoded shapes differ"));
    }
    let n = x.rows() as f64;
    let total: f64 = match kind {
        ReconKind::Bernoulli => {
            check_bernoulli_range(x)?;
            -x.data()
                .iter()
                .zip(decoded.data())
                .map(|(&xi, &pi)| {
                    let p = pi.clamp(BERNOULLI_CLIP, 1.0 - BERNOULLI_CLIP);
                    xi * p.ln() + (1.0 - xi) * (1.0 - p).ln()
                })
                .sum::<f64>()
        }
        ReconKind::Gaussian => x.data().iter().zip(decoded.data()).map(|(a, b)| (a - b) * (a - b)).sum(),
    };
    Ok(total / n)
}

/// Negative ELBO per sample: reconstruction plus standard-normal KL,
/// averaged over the rows of a batch.
pub fn vae_loss(x: &Tensor, decoded: &Tensor, mu: &Tensor, logvar: &Tensor, kind: ReconKind) -> Result<f64> {
    Ok(recon_term(x, decoded, kind)? + kl_standard(mu, logvar)? / mu.rows() as f64)
}

/// Training objective of one batch under fixed noise `eps` (rows of `x` by
/// latent width), with its gradient for every parameter.
pub fn batch_objective(model: &VaeModel, x: &Tensor, eps: &Tensor) -> Result<(f64, Gradients)> {
    check_width(x, model.config.architecture.input_dim, "batch_objective")?;
    check_noise(x, eps, model.latent_dim())?;
    let g = batch_graph(
        &model.net,
        &model.params,
        x.clone(),
        eps.clone(),
        &vec![0; x.rows()],
        model.config.recon,
        &LossWeights {
            recon: 1.0,
            regularizer: model.config.kl_weight,
        },
        &StandardNormalPrior,
    );
    Ok((g.tape.value(g.loss).item(), g.tape.gradient(g.loss, &model.params)?))
}

pub(crate) fn check_noise(x: &Tensor, eps: &Tensor, latent_dim: usize) -> Result<()> {
    if eps.shape() != [x.rows(), latent_dim] {
        return Err(Error::contract(format!(
            "noise shape {:?} does not match {} rows by {latent_dim} latent dims",
            eps.shape(),
            x.rows()
        )));
    }
    Ok(())
}

pub fn train_vae(dataset: &LabeledDataset, config: &VaeConfig) -> Result<(VaeModel, LossHistory)> {
    if dataset.is_empty() {
        return Err(Error::contract("cannot train on an empty dataset"));
    }
    config.train.validate()?;
    check_width(dataset.features(), config.architecture.input_dim, "train_vae")?;
    if config.recon == ReconKind::Bernoulli {
        check_bernoulli_range(dataset.features())?;
    }
    let mut model = VaeModel::new(config.clone())?;
    let history = fit_variational(
        &model.net,
        &mut model.params,
        dataset,
        config.recon,
        &config.train,
        &LossWeights {
            recon: 1.0,
            regularizer: config.kl_weight,
        },
        &StandardNormalPrior,
    )?;
    Ok((model, history))
}

/// Posterior-mean embedding of every row; labels carried through.
pub fn project(model: &VaeModel, dataset: &LabeledDataset) -> Result<LatentSet> {
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_vanishes_at_the_prior() {
        let mu = Tensor::vector(vec![0.0, 0.0, 0.0]);
        let lv = Tensor::vector(vec![0.0, 0.0, 0.0]);
        assert_eq!(kl_standard(&mu, &lv).unwrap(), 0.0);
    }

    #[test]
    fn kl_hand_value() {
        let mu = Tensor::vector(vec![1.0, 0.0]);
        let lv = Tensor::vector(vec![0.0, 0.0]);
        assert!((kl_standard(&mu, &lv).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn reparameterize_cases() {
        let mu = Tensor::vector(vec![0.5, -1.0]);
        let zero = Tensor::vector(vec![0.0, 0.0]);
        assert_eq!(reparameterize(&mu, &zero, &zero).unwrap(), mu);
        let e = Tensor::vector(vec![0.25, 2.0]);
        assert_eq!(reparameterize(&mu, &zero, &e).unwrap().data(), &[0.75, 1.0]);
    }

    #[test]
    fn loss_is_recon_alone_at_the_prior() {
        let x = Tensor::matrix(1, 3, vec![1.0, 0.0, 1.0]);
        let dec = Tensor::matrix(1, 3, vec![0.8, 0.3, 0.6]);
        let mu = Tensor::matrix(1, 2, vec![0.0, 0.0]);
        let lv = Tensor::matrix(1, 2, vec![0.0, 0.0]);
        let rec = recon_term(&x, &dec, ReconKind::Bernoulli).unwrap();
        assert_eq!(vae_loss(&x, &dec, &mu, &lv, ReconKind::Bernoulli).unwrap(), rec);
    }

    #[test]
    fn near_perfect_bernoulli_reconstruction() {
        let d = 50;
        let x = Tensor::matrix(1, d, (0..d).map(|i| (i % 2) as f64).collect());
        let rec = recon_term(&x, &x, ReconKind::Bernoulli).unwrap();
        assert!(rec < d as f64 * 1e-6, "{rec}");
    }

    #[test]
    fn bernoulli_rejects_out_of_range_data() {
        let x = Tensor::matrix(1, 2, vec![1.5, 0.0]);
        let dec = Tensor::matrix(1, 2, vec![0.5, 0.5]);
        assert!(matches!(recon_term(&x, &dec, ReconKind::Bernoulli), Err(Error::Contract(_))));
    }

    #[test]
    fn tape_and_direct_losses_agree() {
        let x = Tensor::matrix(2, 3, vec![1.0, 0.0, 0.2, 0.9, 0.4, 0.0]);
        let dec = Tensor::matrix(2, 3, vec![0.7, 0.1, 0.3, 0.8, 0.5, 0.2]);
        let mu = Tensor::matrix(2, 2, vec![0.3, -0.2, 1.0, 0.4]);
        let lv = Tensor::matrix(2, 2, vec![-0.5, 0.1, 0.2, -1.0]);
        for kind in [ReconKind::Bernoulli, ReconKind::Gaussian] {
            let mut tape = GradTape::new();
            let (xv, dv) = (tape.constant(x.clone()), tape.constant(dec.clone()));
            let (mv, lvv) = (tape.constant(mu.clone()), tape.constant(lv.clone()));
            let r = recon_graph(&mut tape, xv, dv, kind);
            let k = kl_standard_graph(&mut tape, mv, lvv);
            let total = tape.add(r, k);
            let direct = vae_loss(&x, &dec, &mu, &lv, kind).unwrap();
            assert!((tape.value(total).item() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_shapes_and_determinism() {
        let cfg = VaeConfig::new(Architecture::new(6, vec![5], 2), ReconKind::Gaussian, TrainConfig::default());
        let model = VaeModel::new(cfg).unwrap();
        let x = Tensor::matrix(3, 6, (0..18).map(|i| (i as f64 * 0.37).sin()).collect());
        let (mu, lv) = encode(&model, &x).unwrap();
        assert_eq!((mu.cols(), lv.cols()), (2, 2));
        assert_eq!(encode(&model, &x).unwrap(), (mu.clone(), lv.clone()));
        assert!(mu.is_finite() && lv.is_finite());
        assert!(encode(&model, &Tensor::matrix(1, 5, vec![0.0; 5])).is_err());
    }
}
