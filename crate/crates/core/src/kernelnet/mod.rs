//! Continuous kernels: SIREN networks over Lie-algebra coordinates and their
//! factorized layouts.

mod factor;
mod kernel;
mod siren;

pub use factor::{Factorization, Factors};
pub use kernel::{
    materialize_full_kernel, relative_coords, spatial_coords, stencil_points, support_mask, KernelNet,
    KernelRole, KernelSpec, SampledKernel,
};
pub use siren::{Siren, SirenConfig};
