//! Seeded training: Adam, aligned random crops, the joint training step and
//! binary checkpoints.

mod adam;
mod checkpoint;
mod data;
mod trainer;

pub use adam::{adam_step, Adam, AdamConfig, Moment};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, MAGIC, VERSION,
};
pub use data::{sample_crops, CropBatch, CropOrigin, Pair};
pub use trainer::{EpochLog, StepReport, TrainConfig, Trainer, DEFAULT_SEED};
