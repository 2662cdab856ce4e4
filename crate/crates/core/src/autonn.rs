//! Minimal tensor autodiff and the convolutional classifier.
//!
//! A [`Tape`] records primitive ops during the forward pass; one reverse
//! sweep yields input gradients, parameter gradients, or layer-activation
//! gradients. ReLU backward supports the guided mode used by
//! guided backpropagation.

mod checkpoint;
pub mod kernels;
mod model;
mod tape;
mod train;

pub use checkpoint::{checkpoint_bytes, load_model, model_from_bytes, save_model, CHECKPOINT_MAGIC};
pub use model::{ConvSpec, ForwardRun, InputKind, Model, ModelConfig, ModelInput};
pub use tape::{NodeId, ReluMode, Tape};
pub use train::{evaluate_accuracy, train, EpochStats, LabeledSample, TrainConfig, TrainHistory};

#[cfg(test)]
mod tests;
