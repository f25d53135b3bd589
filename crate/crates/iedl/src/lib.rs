//! Instruction error detection and localization with a cross-modal
//! transformer, trained on benchmark episodes paired with policy trajectories.

pub mod io;
pub mod model;
pub mod tape;
pub mod tensor;
pub mod train;

pub use model::{joint_loss, Batch, Example, Model, ModelConfig, Output, Vocabulary};
pub use train::{detect_and_localize, train, TrainLog};
