//! Group elements, exp/log maps, determinants and subgroup grids for SE(2),
//! R² ⋊ R⁺ and Sim(2).

mod grid;
mod group;

pub use grid::{GridMeta, SubgroupGrid};
pub use group::{angle_distance, wrap_angle, AlgebraVector, GroupElement, GroupTag, ANGLE_SNAP};
