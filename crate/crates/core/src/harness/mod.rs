//! Training, evaluation, ablation and checkpoint persistence.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod optim;
pub mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, ParamEntry, MAGIC,
};
pub use config::{LrSchedule, ModelShape, OptimizerConfig, TrainConfig};
pub use eval::{
    audio_raw_report, eval_indices, evaluate, evaluate_model, run_ablation, AblationRow,
    AblationTable,
};
pub use optim::{AdamW, ParamGroup};
pub use train::{init_seed, train, LossLog, StepRecord, TrainOutcome, Trainer};
