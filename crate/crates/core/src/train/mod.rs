//! Charbonnier-loss training with Adam and a cosine learning-rate schedule.

mod adam;
mod checkpoint;
mod config;
mod engine;
mod loss;

pub use adam::Adam;
pub use checkpoint::{latest_checkpoint, Checkpoint, CHECKPOINT_DIR};
pub use config::TrainConfig;
pub use engine::{
    sample_batch, train_loop, train_step, LogRecord, LoopOptions, Sample, StepReport, TrainOutcome, TrainState,
    LOG_FILE,
};
pub use loss::{charbonnier_loss, cosine_lr};
