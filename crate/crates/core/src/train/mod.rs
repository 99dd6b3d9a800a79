//! Optimizer, schedules, EMA, checkpoints, configuration and the training
//! entry points for the teacher, both tokenizer stages and the generator.

mod checkpoint;
mod config;
mod log;
mod optim;
mod pipeline;

pub use checkpoint::{
    check_layout, decode_checkpoint, encode_checkpoint, fnv1a, load_checkpoint, save_checkpoint, MAGIC, VERSION,
};
pub use config::TrainConfig;
pub use log::{MetricLog, MetricRow};
pub use optim::{adamw_step, cosine_lr, AdamW, Ema, OptimizerState};
pub use pipeline::{
    batch_indices, finetune, joint_accuracy, sample_spec, train_ae_stage1, train_ae_stage2, train_ar, train_teacher,
    AeModel, AeRun, ArModel, ArRun, TeacherModel, TeacherRun,
};
