//! Small dense/convolutional networks with exact reverse-mode gradients,
//! Adam, and a binary weight format. Everything is `f64` and single-sample.

mod checkpoint;
pub mod layers;
mod network;
mod optim;
mod tensor;

pub use checkpoint::{read_tensors, write_tensors, MAGIC};
pub use layers::{
    conv1d_backward, conv1d_forward, conv3d_backward, conv3d_forward, dense_backward, dense_forward, relu_backward,
    relu_forward,
};
pub use network::{
    ArchConfig, AsNetInput, BranchSpec, Gradients, LayerSpec, LossTarget, NetInput, Network,
    NetworkSpec, Tape, OUTPUTS,
};
pub use optim::{optimizer_step, AdamState};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("network output must have width 2, head produces {0:?}")]
    BadHead(Vec<usize>),
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
