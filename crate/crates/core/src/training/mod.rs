//! DQN and robust-student training: hyperparameters, schedules, losses and
//! the frame loop.

mod config;
pub mod losses;
mod run;
mod schedule;

pub use config::{Algorithm, LambdaPreset, LossKind, RunSpec, TrainConfig};
pub use losses::{distill, distill_loss, q_update, student_update, td_targets, DistillSettings, QUpdate};
pub use run::{
    deployed_network, run_training, Adversary, CheckpointInfo, FrameEvent, MetricRecord, RecordKind, Streams,
    TrainOutcome, Trainer, CHECKPOINT_FORMAT,
};
pub use schedule::Schedule;
