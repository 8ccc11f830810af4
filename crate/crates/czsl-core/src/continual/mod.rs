//! Task schedules, generative replay, and the per-task training loop.

pub mod experiment;
pub mod replay;
pub mod schedule;
pub mod train;

pub use experiment::{
    assemble_report, evaluate_task, resolve_trace_classes, run_experiment, ExperimentOutcome,
    TaskEvaluation,
};
pub use replay::{generate_replay, ReplaySet, REPLAY_BUDGET_FACTOR};
pub use schedule::{build_preset, build_schedule, Preset, Setting, TaskSchedule, TaskSpec};
pub use train::{train_task, AblationFlags, EpochTrace, TaskData, TrainAudit, TrainConfig};
