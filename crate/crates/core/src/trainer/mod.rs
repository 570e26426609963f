//! Training loop, evaluation, clustering-only mode, grid search and checkpoints.

mod checkpoint;
mod cluster;
mod config;
mod grid;
mod model;
mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta, MAGIC, VERSION};
pub use cluster::{cluster_only, ClusterOutcome, ClusterReport};
pub use config::{
    AlignKind, TargetUpdate, TrainConfig, GRID_BATCH, GRID_K, GRID_LOSS_WEIGHT, GRID_LR, GRID_TE,
    GRID_WEIGHT_DECAY, MAX_EPOCHS, PATIENCE, T0,
};
pub use grid::{
    grid_search, mean_std, threads_from_env, CellSummary, GridAxes, GridReport, GridRow,
    THREADS_ENV,
};
pub use model::{AlignParts, Forward, Gate, GateMode, Model, Prediction, INFERENCE_CHUNK};
pub use train::{
    argmax_rows, evaluate, history_jsonl, inspect, nearest_rows, predict, train, train_step,
    EarlyStopping, EpochRecord, EvalReport, GroupRatios, InspectReport, Prepared, Representative,
    Session, StepInput, StepLosses, TaskAuc, TrainOutcome,
};
