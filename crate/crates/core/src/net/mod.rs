//! One-dimensional convolutional classifier over word or entity sequences.

mod checkpoint;
mod config;
mod model;
mod train;

pub use checkpoint::{from_bytes, load_model, save_model, to_bytes};
pub use config::{default_seq_len, ModelConfig};
pub use model::{
    bce, bce_with_logit, encode, sigmoid, Activations, CoherenceModel, Gradients, Mode, Params, TENSOR_NAMES,
};
pub use train::{accuracy, evaluate, train, EarlyStopping, EpochStats, Evaluation, StopDecision, TrainReport};
