//! Dense feedforward classifier: layers, batch forward/backward with exact
//! analytic gradients, optimizers, output-layer extension, encoder freezing
//! and checkpointing.

pub mod checkpoint;
pub mod gradcheck;
pub mod layer;
pub mod model;
pub mod optim;

pub use checkpoint::{load_model, model_from_json, model_to_json, save_model};
pub use gradcheck::{finite_difference_check, ModelObjective};
pub use layer::{Activation, DenseLayer};
pub use model::{
    FeedforwardClassifier, ForwardCache, Gradients, LayerGradients, TensorFlags, TrainableMask,
};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
