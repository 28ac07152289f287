//! Orchestration: configs, training runs, evaluation, ablation tables, the
//! self-check suite and static reports.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod report;
pub mod train;
pub mod verify;

pub use ablation::{run_ablation, AblationTable, Variant};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use config::{GenConfig, RunConfig, VerifyConfig, DEFAULT_SEED};
pub use eval::{evaluate, Metrics};
pub use report::emit_reports;
pub use train::{run_training, RunOutcome, TrainOptions};
pub use verify::{verify, VerifyOptions, VerifyReport};
