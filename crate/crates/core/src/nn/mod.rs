//! Minimal differentiable computation layer.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod param;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use graph::{Graph, Mode, NodeId};
pub use layers::{BatchNorm, Conv2d, Dense, LayerConfig};
pub use optim::{Optimizer, OptimizerKind};
pub use param::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
