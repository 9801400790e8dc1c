//! Dense neural-network substrate: matrices, layers, models, losses,
//! optimizers and gradient verification.

pub mod checkpoint;
pub mod gradcheck;
pub mod layer;
pub mod loss;
pub mod matrix;
pub mod model;
pub mod optim;

pub use gradcheck::{gradient_check, LossSpec};
pub use layer::{Layer, LayerGrads, LayerSpec};
pub use matrix::Matrix;
pub use model::{param_sq_distance, ForwardTrace, GradBundle, MlpModel};
pub use optim::{OptimKind, OptimizerState};
