//! The convolutional network: parameters, forward/backward passes, ADADELTA
//! and checkpoints.

mod adadelta;
mod checkpoint;
pub(crate) mod gemm;
mod network;
mod params;
mod train;

pub use adadelta::OptimizerState;
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, MAGIC, VERSION};
pub use network::{
    cross_entropy, forward, hidden_activations, loss_and_gradients, predict, Dropout, ForwardPass, Mode,
};
pub use params::{NetworkParams, ParamGroup};
pub use train::{accuracy, evaluate_loss, train, LabeledImages, TrainConfig, TrainOutcome};

pub const INPUT_SIDE: usize = 28;
pub const KERNEL: usize = 4;
pub const CONV_CHANNELS: usize = 32;
pub const CONV1_SIDE: usize = INPUT_SIDE - KERNEL + 1;
pub const CONV2_SIDE: usize = CONV1_SIDE - KERNEL + 1;
pub const POOL_SIDE: usize = CONV2_SIDE / 2;
/// Flattened pooled map: 11 * 11 * 32.
pub const FLAT: usize = POOL_SIDE * POOL_SIDE * CONV_CHANNELS;
/// Width of the fully-connected layer whose activations serve as embeddings.
pub const HIDDEN: usize = 128;

/// Output classes of the cause-effect head.
pub const CE_CLASSES: usize = 3;
/// Output classes of the digit head.
pub const MNIST_CLASSES: usize = 10;
