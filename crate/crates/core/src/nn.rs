//! Fully connected layers on top of the gradient tape, plus the shared
//! mini-batch training configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{GradTape, ParamId, ParamStore, RngState, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, tape: &mut GradTape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// `y = act(x W + b)` with `W: [inputs, outputs]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut RngState,
    ) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let w: Vec<f64> = (0..inputs * outputs)
            .map(|_| rng.uniform_range(-limit, limit))
            .collect();
        let weight = store.register(format!("{name}.weight"), Tensor::matrix(inputs, outputs, w));
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Self {
            weight,
            bias,
            activation,
        }
    }

    /// Looks up an existing layer's parameters by name.
    pub fn bind(store: &ParamStore, name: &str, activation: Activation) -> Result<Self> {
        let find = |suffix: &str| {
            store
                .id_of(&format!("{name}.{suffix}"))
                .ok_or_else(|| Error::Config(format!("missing parameter {name}.{suffix}")))
        };
        Ok(Self {
            weight: find("weight")?,
            bias: find("bias")?,
            activation,
        })
    }

    pub fn inputs(&self, store: &ParamStore) -> usize {
        store.get(self.weight).rows()
    }

    pub fn outputs(&self, store: &ParamStore) -> usize {
        store.get(self.weight).cols()
    }

    pub fn forward(&self, tape: &mut GradTape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w);
        let pre = tape.add_row(xw, b);
        self.activation.apply(tape, pre)
    }
}

/// A stack of dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`; hidden layers use `hidden`, the last uses `output`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut RngState,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                Dense::new(store, &format!("{name}.{i}"), w[0], w[1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn bind(
        store: &ParamStore,
        name: &str,
        depth: usize,
        hidden: Activation,
        output: Activation,
    ) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| {
                let act = if i + 1 == depth { output } else { hidden };
                Dense::bind(store, &format!("{name}.{i}"), act)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn input_width(&self, store: &ParamStore) -> usize {
        self.layers[0].inputs(store)
    }

    pub fn output_width(&self, store: &ParamStore) -> usize {
        self.layers[self.layers.len() - 1].outputs(store)
    }

    pub fn forward(&self, tape: &mut GradTape, store: &ParamStore, x: Var) -> Var {
        self.layers
            .iter()
            .fold(x, |h, layer| layer.forward(tape, store, h))
    }
}

/// Mini-batch optimization settings shared by all three model kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Epoch-mean loss components, one entry per epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub total: Vec<f64>,
    pub reconstruction: Vec<f64>,
    pub regularizer: Vec<f64>,
}

impl LossHistory {
    pub fn first(&self) -> Option<f64> {
        self.total.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.total.last().copied()
    }
}

/// Shuffled mini-batch index lists for one epoch.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, rng: &mut RngState) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub(crate) fn check_width(x: &Tensor, expected: usize, what: &str) -> Result<()> {
    if x.cols() != expected {
        return Err(Error::contract(format!(
            "{what}: input width {} does not match model width {expected}",
            x.cols()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    #[test]
    fn mlp_shapes_and_binding() {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(3);
        let mlp = Mlp::new(&mut store, "enc", &[5, 4, 2], Activation::Tanh, Activation::Identity, &mut rng);
        assert_eq!(mlp.input_width(&store), 5);
        assert_eq!(mlp.output_width(&store), 2);
        let rebound = Mlp::bind(&store, "enc", 2, Activation::Tanh, Activation::Identity).unwrap();
        assert_eq!(rebound, mlp);

        let mut tape = GradTape::new();
        let x = tape.constant(Tensor::matrix(3, 5, vec![0.1; 15]));
        let y = mlp.forward(&mut tape, &store, x);
        assert_eq!(tape.value(y).shape(), &[3, 2]);
    }

    #[test]
    fn batches_cover_every_index_once() {
        let mut rng = seeded_rng(0);
        let batches = epoch_batches(10, 4, &mut rng);
        assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }
}
