//! The learnable x0-predictor: a small 3D U-Net over the 24-channel
//! conditioned input, its loss, the training loop and checkpoints.
//!
//! All arithmetic runs in f64 so that analytic gradients can be checked
//! against finite differences.

mod checkpoint;
mod layers;
mod loss;
mod net;
mod train;

pub use checkpoint::{header_path, load_checkpoint, save_checkpoint, CheckpointHeader, CHECKPOINT_FORMAT};
pub use layers::Activation;
pub use loss::{loss, loss_parts, LossParts};
pub use net::{DenoiserNet, NetConfig, IN_CHANNELS, OUT_CHANNELS};
pub use train::{smoothed, train, TrainConfig, TrainReport, TrainingPair};
