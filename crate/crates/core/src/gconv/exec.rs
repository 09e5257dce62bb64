use std::rc::Rc;

use crate::error::{Error, Result};
use crate::kernelnet::{Factors, SampledKernel};
use crate::lie::SubgroupGrid;
use crate::tensor::{Graph, Padding, Reduce, Tensor, Var};

/// Feature map on `R² ⋊ H`, shaped `(B, C, H, Y, X)`, or a plain image
/// `(B, C, Y, X)` when no grid is attached. Product grids keep a single
/// scale-major H axis.
#[derive(Clone, Debug)]
pub struct GFeatureMap {
    pub value: Var,
    pub grid: Option<SubgroupGrid>,
}

impl GFeatureMap {
    pub fn image(value: Var) -> Self {
        Self { value, grid: None }
    }

    pub fn on_grid(value: Var, grid: SubgroupGrid) -> Self {
        Self {
            value,
            grid: Some(grid),
        }
    }

    /// Checks the array layout against the attached grid.
    pub fn validate(&self, g: &Graph) -> Result<()> {
        let s = g.shape(self.value);
        match &self.grid {
            None if s.len() == 4 => Ok(()),
            Some(grid) if s.len() == 5 && s[2] == grid.len() => Ok(()),
            _ => Err(Error::shape(format!(
                "feature map {s:?} does not match its grid of size {:?}",
                self.grid.as_ref().map(SubgroupGrid::len)
            ))),
        }
    }

    fn grid(&self) -> Result<&SubgroupGrid> {
        self.grid
            .as_ref()
            .ok_or_else(|| Error::arg("expected a feature map on the group, got an image"))
    }
}

/// `1/|h|` for every element of the grid.
pub fn inverse_determinants(grid: &SubgroupGrid) -> Vec<f64> {
    grid.elements().iter().map(|h| 1.0 / h.determinant()).collect()
}

/// Multiplies the slices `v[h, ...]` by `weights[h]`.
fn weight_leading(g: &mut Graph, v: Var, weights: &[f64]) -> Result<Var> {
    if weights.iter().all(|&w| w == 1.0) {
        return Ok(v);
    }
    let shape = g.shape(v).to_vec();
    let tail = shape[1..].iter().product::<usize>();
    let data = weights.iter().flat_map(|&w| std::iter::repeat_n(w, tail)).collect();
    g.mul_const(v, Rc::new(Tensor::new(&shape, data)?))
}

fn dims5(g: &Graph, f: &GFeatureMap) -> Result<[usize; 5]> {
    f.validate(g)?;
    g.shape(f.value)
        .try_into()
        .map_err(|_| Error::shape("expected a (B, C, H, Y, X) feature map"))
}

fn shape_of<const N: usize>(g: &Graph, v: Var) -> [usize; N] {
    g.shape(v).try_into().expect("factor rank fixed by its layout")
}

fn check_channels(c_in: usize, expected: usize) -> Result<()> {
    if c_in != expected {
        return Err(Error::shape(format!(
            "kernel expects {expected} input channels, feature map has {c_in}"
        )));
    }
    Ok(())
}

fn check_in_grid(f: &GFeatureMap, kernel: &SampledKernel) -> Result<()> {
    let grid = f.grid()?;
    match &kernel.in_grid {
        Some(kg) if kg.len() == grid.len() && kg.tag() == grid.tag() => Ok(()),
        _ => Err(Error::arg("kernel was sampled for a different input grid")),
    }
}

/// Lifting convolution: for each `h`, the image is correlated with
/// `k(h⁻¹·)/|h|`.
pub fn lift_conv(g: &mut Graph, f: Var, kernel: &SampledKernel, padding: Padding) -> Result<GFeatureMap> {
    let Factors::Lift { spatial } = kernel.factors else {
        return Err(Error::arg("lift_conv needs a lifting kernel"));
    };
    let [b, ci, y, x]: [usize; 4] = g
        .shape(f)
        .try_into()
        .map_err(|_| Error::shape("lift_conv input must be (B, C, Y, X)"))?;
    let [nh, u, j, i] = shape_of::<4>(g, spatial);
    check_channels(ci, i)?;
    let k = kernel.k;
    debug_assert_eq!(u, k * k);
    let w = weight_leading(g, spatial, &inverse_determinants(&kernel.out_grid))?;
    let w = g.permute(w, &[2, 0, 3, 1])?;
    let w = g.reshape(w, &[j * nh, i, k, k])?;
    let out = g.conv2d(f, w, 1, padding)?;
    let out = g.reshape(out, &[b, j, nh, y, x])?;
    Ok(GFeatureMap::on_grid(out, kernel.out_grid.clone()))
}

/// Direct group convolution with a dense kernel `(H, H̃, U, J, I)`:
/// a double sum over `x̃` and `h̃` weighted by `1/|h|`.
pub fn group_conv(
    g: &mut Graph,
    f: &GFeatureMap,
    full: Var,
    out_grid: &SubgroupGrid,
    k: usize,
    padding: Padding,
) -> Result<GFeatureMap> {
    let [b, ci, nt, y, x] = dims5(g, f)?;
    let [nh, nt2, u, j, i] = shape_of::<5>(g, full);
    check_channels(ci, i)?;
    if nt2 != nt || nh != out_grid.len() || u != k * k {
        return Err(Error::arg(format!(
            "dense kernel {:?} incompatible with input H {nt}, output H {}, stencil {k}",
            g.shape(full),
            out_grid.len()
        )));
    }
    let w = weight_leading(g, full, &inverse_determinants(out_grid))?;
    let w = g.permute(w, &[3, 0, 4, 1, 2])?;
    let w = g.reshape(w, &[j * nh, i * nt, k, k])?;
    let input = g.reshape(f.value, &[b, i * nt, y, x])?;
    let out = g.conv2d(input, w, 1, padding)?;
    let out = g.reshape(out, &[b, j, nh, y, x])?;
    Ok(GFeatureMap::on_grid(out, out_grid.clone()))
}

/// Separable executors: a pointwise contraction over `h̃` (and channels)
/// followed by a per-`h` spatial correlation with the transformed spatial
/// factor scaled by `1/|h|`.
pub fn separable_group_conv(
    g: &mut Graph,
    f: &GFeatureMap,
    kernel: &SampledKernel,
    padding: Padding,
) -> Result<GFeatureMap> {
    check_in_grid(f, kernel)?;
    let [b, ci, nt, y, x] = dims5(g, f)?;
    let k = kernel.k;
    let nh = kernel.out_grid.len();
    let inv_det = inverse_determinants(&kernel.out_grid);
    let out = match kernel.factors {
        Factors::Separable { subgroup, spatial } => {
            let [_, _, j, i] = shape_of::<4>(g, subgroup);
            check_channels(ci, i)?;
            let w = g.permute(subgroup, &[2, 0, 3, 1])?;
            let w = g.reshape(w, &[j * nh, i * nt, 1, 1])?;
            let input = g.reshape(f.value, &[b, i * nt, y, x])?;
            let mixed = g.conv2d(input, w, 1, padding)?;
            depthwise(g, mixed, spatial, &inv_det, k, padding)?
        }
        Factors::Gseparable { subgroup, spatial } => {
            let [_, _, j, i] = shape_of::<4>(g, subgroup);
            check_channels(ci, i)?;
            let w = g.permute(subgroup, &[3, 2, 0, 1])?;
            let w = g.reshape(w, &[i * j * nh, nt, 1, 1])?;
            let input = g.reshape(f.value, &[b, i * nt, y, x])?;
            let mixed = g.conv2d(input, w, i, padding)?;
            let mixed = g.reshape(mixed, &[b, i, j * nh, y, x])?;
            let mixed = g.permute(mixed, &[0, 2, 1, 3, 4])?;
            let mixed = g.reshape(mixed, &[b, j * nh * i, y, x])?;
            let s = weight_leading(g, spatial, &inv_det)?;
            let s = g.permute(s, &[2, 0, 3, 1])?;
            let s = g.reshape(s, &[j * nh, i, k, k])?;
            g.conv2d(mixed, s, j * nh, padding)?
        }
        Factors::Dseparable { channel, joint } => {
            let [j, i] = shape_of::<2>(g, channel);
            check_channels(ci, i)?;
            let mixed = channel_mix(g, f.value, channel, [b, i, nt, y, x])?;
            let w = weight_leading(g, joint, &inv_det)?;
            let w = g.permute(w, &[3, 0, 1, 2])?;
            let w = g.reshape(w, &[j * nh, nt, k, k])?;
            g.conv2d(mixed, w, j, padding)?
        }
        Factors::DGseparable {
            channel,
            subgroup,
            spatial,
        } => {
            let [j, i] = shape_of::<2>(g, channel);
            check_channels(ci, i)?;
            let mixed = channel_mix(g, f.value, channel, [b, i, nt, y, x])?;
            let w = g.permute(subgroup, &[2, 0, 1])?;
            let w = g.reshape(w, &[j * nh, nt, 1, 1])?;
            let mixed = g.conv2d(mixed, w, j, padding)?;
            depthwise(g, mixed, spatial, &inv_det, k, padding)?
        }
        _ => return Err(Error::arg("separable_group_conv needs a separable factorization")),
    };
    let j = g.shape(out)[1] / nh;
    let out = g.reshape(out, &[b, j, nh, y, x])?;
    Ok(GFeatureMap::on_grid(out, kernel.out_grid.clone()))
}

/// `(B, I, H̃, Y, X)` → `(B, J·H̃, Y, X)` by a 1×1 channel mix with `H̃`
/// folded into the rows.
fn channel_mix(g: &mut Graph, f: Var, channel: Var, [b, i, nt, y, x]: [usize; 5]) -> Result<Var> {
    let j = g.shape(channel)[0];
    let input = g.reshape(f, &[b, i, nt * y, x])?;
    let w = g.reshape(channel, &[j, i, 1, 1])?;
    let out = g.conv2d(input, w, 1, Padding::Zero)?;
    g.reshape(out, &[b, j * nt, y, x])
}

/// Per-`(j, h)` spatial correlation with `spatial: (H, U, J)` scaled by
/// `1/|h|`; input rows are ordered `(j, h)`.
fn depthwise(g: &mut Graph, input: Var, spatial: Var, inv_det: &[f64], k: usize, padding: Padding) -> Result<Var> {
    let [nh, _, j] = shape_of::<3>(g, spatial);
    let s = weight_leading(g, spatial, inv_det)?;
    let s = g.permute(s, &[2, 0, 1])?;
    let s = g.reshape(s, &[j * nh, 1, k, k])?;
    g.conv2d(input, s, j * nh, padding)
}

/// Sim(2) three-stage executor: contraction over scales (rotation folded
/// into rows), contraction over rotations, then per-`(s, θ)` spatial
/// correlation weighted by `1/s²`.
pub fn h_separable_conv(
    g: &mut Graph,
    f: &GFeatureMap,
    kernel: &SampledKernel,
    padding: Padding,
) -> Result<GFeatureMap> {
    check_in_grid(f, kernel)?;
    let Factors::HSeparable {
        scale,
        rotation,
        spatial,
    } = kernel.factors
    else {
        return Err(Error::arg("h_separable_conv needs an H-separable kernel"));
    };
    let in_grid = f.grid()?;
    if in_grid.tag() != crate::lie::GroupTag::Sim2 {
        return Err(Error::arg("h_separable_conv needs a Sim(2) feature map"));
    }
    let [b, ci, _, y, x] = dims5(g, f)?;
    let [ns, nst, j, i] = shape_of::<4>(g, scale);
    let [nr, nrt, _] = shape_of::<3>(g, rotation);
    check_channels(ci, i)?;
    if nst != in_grid.n_scale() || nrt != in_grid.n_rot() {
        return Err(Error::arg("kernel was sampled for a different input grid"));
    }
    let k = kernel.k;

    let input = g.reshape(f.value, &[b, i * nst, nrt * y, x])?;
    let w = g.permute(scale, &[2, 0, 3, 1])?;
    let w = g.reshape(w, &[j * ns, i * nst, 1, 1])?;
    let stage1 = g.conv2d(input, w, 1, padding)?;
    let stage1 = g.reshape(stage1, &[b, j * ns * nrt, y, x])?;

    let w = g.permute(rotation, &[2, 0, 1])?;
    let w = g.broadcast_axis(w, 1, ns)?;
    let w = g.reshape(w, &[j * ns * nr, nrt, 1, 1])?;
    let stage2 = g.conv2d(stage1, w, j * ns, padding)?;

    let out = depthwise(g, stage2, spatial, &inverse_determinants(&kernel.out_grid), k, padding)?;
    let out = g.reshape(out, &[b, j, ns * nr, y, x])?;
    Ok(GFeatureMap::on_grid(out, kernel.out_grid.clone()))
}

/// Runs the executor matching the kernel's layout.
pub fn apply_kernel(g: &mut Graph, f: &GFeatureMap, kernel: &SampledKernel, padding: Padding) -> Result<GFeatureMap> {
    match kernel.factors {
        Factors::Lift { .. } => {
            if f.grid.is_some() {
                return Err(Error::arg("lifting kernels take images"));
            }
            lift_conv(g, f.value, kernel, padding)
        }
        Factors::Nonseparable { full } => {
            check_in_grid(f, kernel)?;
            group_conv(g, f, full, &kernel.out_grid, kernel.k, padding)
        }
        Factors::HSeparable { .. } => h_separable_conv(g, f, kernel, padding),
        _ => separable_group_conv(g, f, kernel, padding),
    }
}

/// Reduces a group feature map over its H axis, and optionally the spatial
/// axes too, leaving `(B, C, Y, X)` or `(B, C)`.
pub fn invariant_project(g: &mut Graph, f: &GFeatureMap, mode: Reduce, include_spatial: bool) -> Result<Var> {
    dims5(g, f)?;
    let axes: &[usize] = if include_spatial { &[2, 3, 4] } else { &[2] };
    g.reduce(f.value, axes, mode)
}
