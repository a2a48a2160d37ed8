//! Deterministic autoencoder baseline: `z = act(W x + b)` on the way in,
//! `x_hat = act_out(W' z + b')` on the way out, optionally with hidden layers
//! on both sides, trained on the batch-mean squared reconstruction error.

use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::latent::{LatentSet, Provenance};
use crate::nn::{check_width, epoch_batches, Activation, LossHistory, Mlp, TrainConfig};
use crate::numerics::{Adam, GradTape, ParamStore, RngState, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    pub input_dim: usize,
    /// Hidden widths of the encoder; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub hidden_activation: Activation,
    /// Activation of the code layer.
    pub latent_activation: Activation,
    pub output_activation: Activation,
    pub train: TrainConfig,
}

impl AeConfig {
    /// Tanh hidden layer of width 128 and the given output activation.
    pub fn new(input_dim: usize, latent_dim: usize, output_activation: Activation, train: TrainConfig) -> Self {
        Self {
            input_dim,
            hidden: vec![128],
            latent_dim,
            hidden_activation: Activation::Tanh,
            latent_activation: Activation::Identity,
            output_activation,
            train,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AeModel {
    pub params: ParamStore,
    pub config: AeConfig,
    encoder: Mlp,
    decoder: Mlp,
}

impl AeModel {
    pub fn new(config: AeConfig) -> Result<Self> {
        if config.input_dim == 0 || config.latent_dim == 0 || config.latent_dim >= config.input_dim {
            return Err(Error::Config(format!(
                "autoencoder needs 0 < latent_dim ({}) < input_dim ({})",
                config.latent_dim, config.input_dim
            )));
        }
        let mut params = ParamStore::new();
        let mut rng = RngState::new(config.train.seed).derive(1);
        let (enc_sizes, dec_sizes) = layer_sizes(&config);
        let encoder = Mlp::new(
            &mut params,
            "encoder",
            &enc_sizes,
            config.hidden_activation,
            config.latent_activation,
            &mut rng,
        );
        let decoder = Mlp::new(
            &mut params,
            "decoder",
            &dec_sizes,
            config.hidden_activation,
            config.output_activation,
            &mut rng,
        );
        Ok(Self {
            params,
            config,
            encoder,
            decoder,
        })
    }

    pub fn from_params(config: AeConfig, params: ParamStore) -> Result<Self> {
        let depth = config.hidden.len() + 1;
        let encoder = Mlp::bind(&params, "encoder", depth, config.hidden_activation, config.latent_activation)?;
        let decoder = Mlp::bind(&params, "decoder", depth, config.hidden_activation, config.output_activation)?;
        Ok(Self {
            params,
            config,
            encoder,
            decoder,
        })
    }

    pub fn id(&self) -> String {
        format!("ae(seed={})", self.config.train.seed)
    }

    /// Weight and bias ids of encoder layer `layer`.
    pub fn encoder_layer_params(&self, layer: usize) -> (crate::numerics::ParamId, crate::numerics::ParamId) {
        let l = &self.encoder.layers[layer];
        (l.weight, l.bias)
    }

    fn forward(&self, tape: &mut GradTape, x: Var) -> (Var, Var) {
        let z = self.encoder.forward(tape, &self.params, x);
        let out = self.decoder.forward(tape, &self.params, z);
        (z, out)
    }

    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        check_width(x, self.config.input_dim, "reconstruct")?;
        let mut tape = GradTape::new();
        let xv = tape.constant(x.clone());
        let (_, out) = self.forward(&mut tape, xv);
        Ok(tape.value(out).clone())
    }
}

fn layer_sizes(config: &AeConfig) -> (Vec<usize>, Vec<usize>) {
    let mut enc = vec![config.input_dim];
    enc.extend(&config.hidden);
    enc.push(config.latent_dim);
    let dec: Vec<usize> = enc.iter().rev().copied().collect();
    (enc, dec)
}

/// Code-layer output for each row of `x`.
pub fn ae_encode(model: &AeModel, x: &Tensor) -> Result<Tensor> {
    check_width(x, model.config.input_dim, "ae_encode")?;
    let mut tape = GradTape::new();
    let xv = tape.constant(x.clone());
    let z = model.encoder.forward(&mut tape, &model.params, xv);
    Ok(tape.value(z).clone())
}

/// Batch mean of `||x - x_hat||^2`.
pub fn reconstruction_loss(x: &Tensor, reconstructed: &Tensor) -> Result<f64> {
    let diff = x.sub(reconstructed)?;
    Ok(diff.data().iter().map(|v| v * v).sum::<f64>() / x.rows() as f64)
}

pub fn train_ae(dataset: &LabeledDataset, config: &AeConfig) -> Result<(AeModel, LossHistory)> {
    if dataset.is_empty() {
        return Err(Error::contract("cannot train on an empty dataset"));
    }
    config.train.validate()?;
    check_width(dataset.features(), config.input_dim, "train_ae")?;
    let mut model = AeModel::new(config.clone())?;
    let mut rng = RngState::new(config.train.seed).derive(2);
    let mut opt = Adam::new(&model.params, config.train.learning_rate);
    let mut history = LossHistory::default();
    let x_all = dataset.features();

    for epoch in 0..config.train.epochs {
        let mut total = 0.0;
        for (b, batch) in epoch_batches(dataset.len(), config.train.batch_size, &mut rng).iter().enumerate() {
            let mut tape = GradTape::new();
            let x = tape.constant(x_all.select_rows(batch));
            let (_, out) = model.forward(&mut tape, x);
            let diff = tape.sub(x, out);
            let sq = tape.square(diff);
            let s = tape.sum(sq);
            let loss = tape.scale(s, 1.0 / batch.len() as f64);
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    value,
                });
            }
            let grads = tape.gradient(loss, &model.params)?;
            opt.step(&mut model.params, &grads);
            total += value * batch.len() as f64;
        }
        let mean = total / dataset.len() as f64;
        history.total.push(mean);
        history.reconstruction.push(mean);
        history.regularizer.push(0.0);
    }
    Ok((model, history))
}

pub fn project(model: &AeModel, dataset: &LabeledDataset) -> Result<LatentSet> {
    LatentSet::new(
        ae_encode(model, dataset.features())?,
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

    fn single_map(activation: Activation) -> AeModel {
        let mut cfg = AeConfig::new(2, 1, Activation::Identity, TrainConfig::default());
        cfg.hidden.clear();
        cfg.latent_activation = activation;
        AeModel::new(cfg).unwrap()
    }

    #[test]
    fn zero_weights_encode_to_zero() {
        let mut m = single_map(Activation::Tanh);
        let (w, b) = m.encoder_layer_params(0);
        m.params.get_mut(w).data_mut().fill(0.0);
        m.params.get_mut(b).data_mut().fill(0.0);
        let z = ae_encode(&m, &Tensor::matrix(1, 2, vec![3.0, -4.0])).unwrap();
        assert_eq!(z.data(), &[0.0]);
    }

    #[test]
    fn identity_code_is_the_affine_map() {
        let mut cfg = AeConfig::new(3, 2, Activation::Identity, TrainConfig::default());
        cfg.hidden.clear();
        let mut m = AeModel::new(cfg).unwrap();
        let (w, b) = m.encoder_layer_params(0);
        // W stored as [inputs, outputs]: z_j = sum_i x_i W[i, j] + b_j
        m.params.get_mut(w).data_mut().copy_from_slice(&[1.0, 2.0, -1.0, 0.5, 3.0, 0.0]);
        m.params.get_mut(b).data_mut().copy_from_slice(&[0.25, -1.0]);
        let x = [2.0, 1.0, -1.0];
        let z = ae_encode(&m, &Tensor::matrix(1, 3, x.to_vec())).unwrap();
        let expected = [
            2.0 * 1.0 + 1.0 * -1.0 + -1.0 * 3.0 + 0.25,
            2.0 * 2.0 + 1.0 * 0.5 + -1.0 * 0.0 - 1.0,
        ];
        assert_eq!(z.data(), &expected);
    }

    #[test]
    fn code_width_is_latent_dim() {
        let cfg = AeConfig::new(10, 3, Activation::Sigmoid, TrainConfig::default());
        let m = AeModel::new(cfg).unwrap();
        let z = ae_encode(&m, &Tensor::matrix(4, 10, vec![0.5; 40])).unwrap();
        assert_eq!(z.shape(), &[4, 3]);
        assert!(ae_encode(&m, &Tensor::matrix(1, 9, vec![0.5; 9])).is_err());
    }

    #[test]
    fn loss_matches_hand_case() {
        let x = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.5, 0.5]);
        let r = Tensor::matrix(2, 2, vec![0.0, 0.0, 0.5, 1.5]);
        assert_eq!(reconstruction_loss(&x, &r).unwrap(), (1.0 + 1.0) / 2.0);
    }
}
