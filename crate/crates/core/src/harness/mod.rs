//! Training, checkpointing, evaluation, sweeps and gradient checks.

pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod gradcheck;
pub mod optim;
pub mod sweep;
pub mod train;

pub use config::{OptimizerKind, TrainConfig};
pub use optim::Optimizer;
pub use train::{plateaued, prepare, train, train_with, LogRow, TrainState, TrainSummary};
pub use evaluate::{evaluate, predict, score, tag, Prediction, TaggedSpans};
pub use sweep::{sweep, SweepGrid, SweepRow};
