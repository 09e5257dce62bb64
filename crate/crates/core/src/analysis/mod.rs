//! Kernel redundancy, equivariance errors, sampling bias and cost
//! benchmarks.

mod bench;
mod equivariance;
mod redundancy;
mod sampling;

pub use bench::{bench_csv, bench_layer, benchmark, counts_match, BenchConfig};
pub use equivariance::{
    equivariance_sweep, layer_equivariance_error, masked_relative_error, model_layerwise_error, rotate_planes,
    SweepCurve, SweepKind, SweepPoint,
};
pub use redundancy::{
    kernel_pca_ratios, kh_variance, layer_kh_variance, pca_redundancy, Histogram, LayerRedundancy,
    RedundancyReport,
};
pub use sampling::{perturbed_grid_estimate, subgroup_contraction, Unbiasedness};
