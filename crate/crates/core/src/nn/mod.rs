//! Dense-layer network engine: tensors, parameter storage, explicit
//! reverse-mode gradients, Adam and the checkpoint container.

mod adam;
pub mod checkpoint;
mod layer;
pub mod loss;
mod params;
pub(crate) mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use layer::{forward_dense, Activation, Effective, Linear, LinearKind, NoiseSample};
pub use loss::{cross_entropy, mse, softmax};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::Tensor;

pub(crate) use layer::{add_into, affine};
