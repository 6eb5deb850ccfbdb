//! Loss, optimizer, learning-rate schedule and the training loop.

mod adamw;
mod loss;
mod schedule;

pub use adamw::{adamw_step, AdamWConfig, OptimizerState};
pub use loss::{cross_entropy, softmax_row};
pub use schedule::lr_schedule;
mod train;

pub use train::{
    evaluate, evaluate_all, resume, sample_trials, size_sweep, train, EvalReport, SplitEval, SweepRow, TaskAccuracy,
    TrainConfig, TrainOutcome,
};
