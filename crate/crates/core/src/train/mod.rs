//! Adam, the dual-loss training loop, training logs and checkpoints.

mod adam;
mod checkpoint;
mod config;
mod log;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, read_checkpoint, save_checkpoint, RawCheckpoint, FORMAT_VERSION, MAGIC,
};
pub use config::{parse_pairs, TrainingConfig, DEFAULT_BATCH, DEFAULT_EPOCHS, DEFAULT_LAMBDA};
pub use log::{log_csv, log_header, write_log_csv, EpochLog};
pub use trainer::{train, training_samples, PatchSet, StepStats, Trainer};
