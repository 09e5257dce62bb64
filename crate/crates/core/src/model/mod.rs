//! The reference G-CNN, its training loop and checkpoints.

mod checkpoint;
mod config;
mod net;
mod train;

pub use checkpoint::{
    decode_container, encode_container, load_store, read_container, save_store, write_container, Container, DType,
};
pub use config::{GCNNConfig, LrSchedule, SamplingMode, TrainConfig};
pub use net::{build_model, group_shortcut, BatchNorm, ForwardTrace, LayerGrids, Model, ResBlock};
pub use train::{
    count_correct, evaluate, evaluate_with_grids, recalibrate_batch_norm, train, train_step, EpochMetrics,
};
