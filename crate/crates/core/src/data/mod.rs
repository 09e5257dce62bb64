//! MNIST ingestion, transformed variants and a synthetic bar corpus.

mod dataset;
mod idx;
mod transform;

pub use dataset::{
    load_dataset, split_indices, split_paper, synth_oriented_bars, Dataset, Provenance, TransformKind,
    BAR_CLASSES, MNIST_SIDE, ROT_MNIST_SPLIT, SCALE_RANGE,
};
pub use idx::{encode_idx, load_idx, load_mnist, parse_idx, IdxArray, IMAGES_MAGIC, LABELS_MAGIC};
pub use transform::{resample, rotate, scale};
