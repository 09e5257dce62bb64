//! Lifting, group and separable group convolutions and their cost model.

mod cost;
mod exec;

pub use cost::{flop_estimate, macs_per_position, CostConfig, CostReport};
pub use exec::{
    apply_kernel, group_conv, h_separable_conv, inverse_determinants, invariant_project, lift_conv,
    separable_group_conv, GFeatureMap,
};
