//! Reference fine-tuning and the learn/forget training loop.

mod config;
mod objective;
mod optim;
mod report;
mod schedule;
mod train;

pub use config::{ScheduleMode, TrainConfig, TrainMode};
pub use objective::{apply_forget_rate, forgetting_loss, objective_weights, LossComponents};
pub use optim::{adamw_step, clip_global_norm, global_norm, AdamW, OptimizerState};
pub use report::{read_report_csv, StepRecord, TrainReport, TrainSummary, ESTIMATOR, REPORT_COLUMNS};
pub use schedule::{lambda_at, lr_at, warmup_steps};
pub use train::{batch_gradients, train, train_reference};

#[cfg(test)]
mod tests;
