//! Objective, optimizer, metrics, checkpoints and the training loop.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod optim;
pub mod trainer;

pub use config::{TrainConfig, PRESETS};
pub use metrics::{ClassMetrics, EvalReport};
pub use optim::Adam;
pub use trainer::{
    evaluate, evaluate_prepared, predict_all, resolve_config, train, EpochMetrics, StepRecord,
    TrainOptions, TrainOutcome, METRICS_HEADER,
};
