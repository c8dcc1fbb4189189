//! Minimal trainable network engine: dense, 3×3 conv, 2×2 max-pool, relu,
//! flatten and dropout layers with softmax/softplus/linear/sigmoid heads,
//! reverse-mode gradients and SGD/Adam training.

pub mod io;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod spec;
pub mod train;

pub use io::{load_network, save_network};
pub use network::{ForwardOutput, Gradients, Masks, Mode, Network, Param, TrainCache};
pub use optim::{Optimizer, OptimizerConfig};
pub use spec::{Head, LayerSpec, LossKind, NetworkSpec};
pub use train::{accuracy, infer_all, predict, train, TrainConfig};
