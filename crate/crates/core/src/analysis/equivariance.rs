//! Test-error sweeps over input transformations and layerwise equivariance
//! errors.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use crate::data::{resample, Dataset};
use crate::error::{Error, Result};
use crate::gconv::{apply_kernel, GFeatureMap};
use crate::kernelnet::KernelNet;
use crate::lie::{GroupElement, SubgroupGrid};
use crate::model::{evaluate_with_grids, LayerGrids, Model};
use crate::tensor::{Graph, Padding, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SweepKind {
    /// Angles `2πi/n`, `i = 0..n`.
    Rotation,
    /// Scale factors evenly spaced over `[min, max]`.
    Scale { min: f64, max: f64 },
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Rotation => "rotation",
            SweepKind::Scale { .. } => "scale",
        }
    }

    pub fn values(self, n_steps: usize) -> Vec<f64> {
        match self {
            SweepKind::Rotation => (0..n_steps).map(|i| TAU * i as f64 / n_steps as f64).collect(),
            SweepKind::Scale { min, max } => {
                if n_steps == 1 {
                    return vec![min];
                }
                (0..n_steps)
                    .map(|i| min + (max - min) * i as f64 / (n_steps - 1) as f64)
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub test_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCurve {
    pub kind: SweepKind,
    pub points: Vec<SweepPoint>,
}

impl SweepCurve {
    /// `param,value,test_error` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("param,value,test_error\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{}", self.kind.name(), p.value, p.test_error);
        }
        s
    }
}

/// Test error of `model` on `ds` transformed by every sweep value, evaluated
/// on the uniform grids.
pub fn equivariance_sweep(model: &Model, ds: &Dataset, kind: SweepKind, n_steps: usize) -> Result<SweepCurve> {
    let grids = model.uniform_grids()?;
    let mut points = Vec::with_capacity(n_steps);
    for value in kind.values(n_steps) {
        let (theta, s) = match kind {
            SweepKind::Rotation => (value, 1.0),
            SweepKind::Scale { .. } => (0.0, value),
        };
        let t = ds.transform_all(theta, s)?;
        let acc = evaluate_with_grids(model, &t, &grids)?;
        points.push(SweepPoint {
            value,
            test_error: 1.0 - acc,
        });
    }
    Ok(SweepCurve { kind, points })
}

/// Rotates every trailing `Y × X` plane of `x` about its centre (bilinear,
/// zero outside).
pub fn rotate_planes(x: &Tensor, theta: f64) -> Result<Tensor> {
    let shape = x.shape();
    if shape.len() < 2 || shape[shape.len() - 1] != shape[shape.len() - 2] {
        return Err(Error::shape(format!("expected square trailing planes, got {shape:?}")));
    }
    let n = shape[shape.len() - 1];
    let mut out = Vec::with_capacity(x.numel());
    for plane in x.data().chunks(n * n) {
        out.extend(resample(plane, n, theta, 1.0)?);
    }
    Tensor::new(shape, out)
}

/// `‖a − b‖ / ‖b‖` restricted to pixels within `radius` of the plane centre.
pub fn masked_relative_error(a: &Tensor, b: &Tensor, radius: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let n = *a.shape().last().unwrap_or(&0);
    let c = (n as f64 - 1.0) / 2.0;
    let mut num = 0.0;
    let mut den = 0.0;
    for (idx, (&va, &vb)) in a.data().iter().zip(b.data()).enumerate() {
        let (row, col) = ((idx / n) % n, idx % n);
        let (dy, dx) = (row as f64 - c, col as f64 - c);
        if dx * dx + dy * dy <= radius * radius {
            num += (va - vb).powi(2);
            den += vb * vb;
        }
    }
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((num / den).sqrt())
}

/// Equivariance error of one convolution layer under the rotation `theta`.
///
/// `ℒ_g` acts on group features by relabelling the grid `𝓗 → g𝓗` and
/// rotating each plane bilinearly, so `Φ(ℒ_g f)` is evaluated on `g𝓗` and
/// compared plane by plane with the rotated `Φ(f)`.
#[allow(clippy::too_many_arguments)]
pub fn layer_equivariance_error(
    kernel: &KernelNet,
    store: &ParamStore,
    input: &Tensor,
    in_grid: Option<&SubgroupGrid>,
    out_grid: &SubgroupGrid,
    theta: f64,
    padding: Padding,
    radius: f64,
) -> Result<f64> {
    let h = GroupElement::rotation(theta);
    let run = |x: Tensor, ig: Option<SubgroupGrid>, og: &SubgroupGrid| -> Result<Tensor> {
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let v = g.constant(x);
        let f = match &ig {
            Some(grid) => GFeatureMap::on_grid(v, grid.clone()),
            None => GFeatureMap::image(v),
        };
        let sk = kernel.sample(&mut g, &p, og, ig.as_ref())?;
        let out = apply_kernel(&mut g, &f, &sk, padding)?;
        Ok(g.value(out.value).clone())
    };
    let moved_in = in_grid.map(|gr| gr.perturb_by(&h)).transpose()?;
    let moved_out = out_grid.perturb_by(&h)?;
    let plain = run(input.clone(), in_grid.cloned(), out_grid)?;
    let moved = run(rotate_planes(input, theta)?, moved_in, &moved_out)?;
    masked_relative_error(&moved, &rotate_planes(&plain, theta)?, radius)
}

/// Layerwise errors `[lifted, block1, block2]` of a model in evaluation
/// mode under a rotation of the input images.
pub fn model_layerwise_error(model: &Model, images: &Tensor, theta: f64) -> Result<[f64; 3]> {
    let h = GroupElement::rotation(theta);
    let run = |x: Tensor, grids: &LayerGrids| -> Result<[Tensor; 3]> {
        let mut g = Graph::new();
        let p = model.store.bind(&mut g, false);
        let v = g.constant(x);
        let (t, _) = model.forward(&mut g, &p, v, grids, false)?;
        Ok([
            g.value(t.lifted.value).clone(),
            g.value(t.block1.value).clone(),
            g.value(t.block2.value).clone(),
        ])
    };
    let plain = run(images.clone(), &model.uniform_grids()?)?;
    let moved = run(rotate_planes(images, theta)?, &model.transformed_grids(&h)?)?;
    let margin = model.config().stencil as f64;
    let mut out = [0.0; 3];
    for (l, (m, p)) in moved.iter().zip(&plain).enumerate() {
        let n = *p.shape().last().unwrap() as f64;
        let radius = ((n - 1.0) / 2.0 - margin).max(1.0);
        out[l] = masked_relative_error(m, &rotate_planes(p, theta)?, radius)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernelnet::{Factorization, KernelRole, KernelSpec, SirenConfig};
    use crate::lie::GroupTag;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn sweep_values() {
        let v = SweepKind::Rotation.values(4);
        assert_eq!(v[0], 0.0);
        assert!((v[1] - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(SweepKind::Scale { min: 0.5, max: 1.0 }.values(3), vec![0.5, 0.75, 1.0]);
    }

    #[test]
    fn masked_error_ignores_corners() {
        let a = Tensor::from_fn(&[1, 5, 5], |i| if i == 0 { 9.0 } else { 1.0 });
        let b = Tensor::ones(&[1, 5, 5]);
        assert_eq!(masked_relative_error(&a, &b, 2.0).unwrap(), 0.0);
        assert!(masked_relative_error(&a, &b, 3.0).unwrap() > 0.0);
    }

    #[test]
    fn quarter_turns_of_c4_layers_are_exact() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = |role, c_in| KernelSpec {
            subgroup: GroupTag::SO2,
            role,
            c_in,
            c_out: 2,
            k: 3,
            siren: SirenConfig::default(),
            scale_support: 0,
        };
        let lift = KernelNet::init(&mut store, "l", spec(KernelRole::Lift, 1), &mut rng).unwrap();
        let conv = KernelNet::init(&mut store, "c", spec(KernelRole::Group(Factorization::Separable), 2), &mut rng)
            .unwrap();
        let grid = SubgroupGrid::uniform(GroupTag::SO2, 4, None).unwrap();
        let img = Tensor::uniform(&[1, 1, 6, 6], -1.0, 1.0, &mut rng);
        let feat = Tensor::uniform(&[1, 2, 4, 6, 6], -1.0, 1.0, &mut rng);
        let e1 = layer_equivariance_error(&lift, &store, &img, None, &grid, FRAC_PI_2, Padding::Circular, 10.0)
            .unwrap();
        let e2 =
            layer_equivariance_error(&conv, &store, &feat, Some(&grid), &grid, FRAC_PI_2, Padding::Circular, 10.0)
                .unwrap();
        assert!(e1 < 1e-12 && e2 < 1e-12, "{e1} {e2}");
    }
}
