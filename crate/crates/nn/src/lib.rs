//! A deliberately small neural-network engine.
//!
//! Networks are flat layer lists; skip connections refer back to earlier
//! activations by index (activation 0 is the network input, activation
//! `i + 1` is the output of layer `i`). Every layer has a hand-derived
//! backward pass, checked against central finite differences in
//! [`gradcheck`].

pub mod checkpoint;
pub mod error;
mod gemm;
pub mod gradcheck;
pub mod layer;
pub mod loss;
pub mod network;
pub mod optim;
pub mod tensor;

pub use error::{NnError, Result};
pub use layer::LayerSpec;
pub use loss::{l1_loss, L1Loss};
pub use network::{Mode, Network, NetworkBuilder};
pub use optim::{OptimizerKind, OptimizerState};
pub use tensor::Tensor;
