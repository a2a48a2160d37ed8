//! Tensors, seeded randomness, reverse-mode gradients and the optimizer.

mod gradcheck;
mod optim;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, GradCheck, GRADCHECK_FLOOR};
pub use optim::Adam;
pub use rng::{mix_seed, sample_standard_normal, seeded_rng, RngState};
pub use tape::{GradTape, Gradients, ParamId, ParamStore, Var};
pub use tensor::Tensor;
