//! Reverse-distillation objective and training loop.

pub mod loss;
pub mod train;

pub use loss::{
    guidance_loss, loss_schedule_for_task, mase_scales, sim, total_loss, DistillLossReport, LossInputs,
    LossSchedule, LossWeights, Task,
};
pub use train::{
    history_csv, parse_history, stop_epoch, EarlyStopping, EpochRecord, TrainData, TrainObserver, TrainSettings,
    TrainState, Trainer, HISTORY_HEADER,
};
