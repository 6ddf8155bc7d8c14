//! Loss, optimizer, training loop and checkpoint persistence.

mod adam;
mod checkpoint;
mod loss;
mod trainer;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use loss::{bce_loss, bce_with_logits, smooth_labels};
pub use trainer::{
    evaluate_model, model_input, predict_all, EpochRecord, TrainConfig, TrainOutcome, TrainState,
    Trainer,
};
