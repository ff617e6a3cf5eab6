//! Minimal deterministic neural-network engine.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod io;
pub mod layer;
pub mod loss;
pub mod model;
pub mod optim;
pub mod pool;

pub use activation::{activate, activate_named, Activation};
pub use batchnorm::Mode;
pub use io::{load_model, save_model};
pub use layer::{GraphBuilder, LayerSpec, SampleShape};
pub use loss::{loss_eval, LossKind};
pub use model::{ForwardCache, Gradients, LayerParams, ModelGraph};
pub use optim::{Optimizer, OptimizerKind};
pub use pool::OddExtent;
