//! Minimal deterministic neural-network substrate: dense arrays, 1D CNN
//! layers, hand-written reverse-mode gradients, SGD, and the loss family.

pub mod arch;
pub mod array;
mod layers;
pub mod loss;
pub mod model;
pub mod network;
pub mod optim;

pub use arch::{ActShape, ArchSpec, Layer};
pub use array::DenseArray;
pub use loss::{cross_entropy_loss, kd_loss, supcon_loss, KdForm};
pub use model::{Gradient, LayerParams, ModelState};
pub use network::{backward, forward, ForwardOutput, LossBreakdown, LossSpec};
pub use optim::{sgd_step, sgd_step_in_place, OptimizerConfig};
