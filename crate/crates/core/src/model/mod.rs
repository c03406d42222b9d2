//! LSTR and CMeRT style detectors/anticipators and their training engine.
//!
//! Both variants compress a subsampled long memory into `n_latent` tokens and
//! decode the recent frames plus `δ` anticipation tokens against it. CMeRT adds
//! a near-past prefix, a near-future feature decoder and a refinement stage.

mod checkpoint;
mod config;
mod network;
mod train;
mod window;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{ModelConfig, TrainConfig, Variant};
pub use network::{
    positional_encoding, struggle_prob, ForwardNodes, Model, ModelOutput,
};
pub use train::{train, Adam, EpochLog, TrainOutcome, TrainingVideo, Validator};
pub use window::{
    sample_training_windows, training_window_ends, WindowInput, WindowLayout, WindowTargets,
};
