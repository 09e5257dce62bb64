//! Monte Carlo check that randomly shifted grids estimate the subgroup
//! contraction without bias.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernelnet::Siren;
use crate::lie::{GroupElement, SubgroupGrid};
use crate::tensor::{ParamStore, Tensor};

/// `(1/n) Σᵢ k_H(h⁻¹h̃ᵢ)[col] · f(h̃ᵢ)` over the grid elements `h̃ᵢ`.
pub fn subgroup_contraction(
    net: &Siren,
    store: &ParamStore,
    col: usize,
    h: &GroupElement,
    grid: &SubgroupGrid,
    f: &dyn Fn(&GroupElement) -> f64,
) -> Result<f64> {
    if col >= net.out_dim() {
        return Err(Error::arg(format!("output {col} out of range for {} outputs", net.out_dim())));
    }
    let dim = grid.tag().subgroup_dim();
    let mut coords = Vec::with_capacity(grid.len() * dim);
    for e in grid.elements() {
        let (c, n) = h.relative(e)?.subgroup_log();
        coords.extend_from_slice(&c[..n]);
    }
    let k = net.evaluate(store, &Tensor::new(&[grid.len(), dim], coords)?)?;
    let out = net.out_dim();
    let total: f64 = grid
        .elements()
        .iter()
        .enumerate()
        .map(|(i, e)| k.data()[i * out + col] * f(e))
        .sum();
    Ok(total / grid.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Unbiasedness {
    /// Mean of the perturbed-grid estimates.
    pub mean: f64,
    pub std_error: f64,
    /// Contraction on the fine uniform grid.
    pub reference: f64,
    pub samples: usize,
}

impl Unbiasedness {
    /// Distance to the reference in standard errors.
    pub fn z_score(&self) -> f64 {
        (self.mean - self.reference).abs() / self.std_error
    }
}

/// Averages the contraction over `samples` random shifts of `coarse` and
/// compares it with the contraction on `fine`.
#[allow(clippy::too_many_arguments)]
pub fn perturbed_grid_estimate<R: Rng + ?Sized>(
    net: &Siren,
    store: &ParamStore,
    col: usize,
    h: &GroupElement,
    coarse: &SubgroupGrid,
    fine: &SubgroupGrid,
    f: &dyn Fn(&GroupElement) -> f64,
    samples: usize,
    allow_noncompact: bool,
    rng: &mut R,
) -> Result<Unbiasedness> {
    if samples < 2 {
        return Err(Error::arg("need at least two samples for a standard error"));
    }
    let est = (0..samples)
        .map(|_| subgroup_contraction(net, store, col, h, &coarse.random_perturb(rng, allow_noncompact)?, f))
        .collect::<Result<Vec<f64>>>()?;
    let n = samples as f64;
    let mean = est.iter().sum::<f64>() / n;
    let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Unbiasedness {
        mean,
        std_error: (var / n).sqrt(),
        reference: subgroup_contraction(net, store, col, h, fine, f)?,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::GroupTag;
    use crate::tensor::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_kernel_integrates_trigonometric_input_to_zero() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Siren::init(&mut store, "k", &[1, 1], 10.0, Activation::Sine, &mut rng).unwrap();
        let w = net.layers()[0].0;
        store.set(w, Tensor::zeros(&[1, 1])).unwrap();
        let grid = SubgroupGrid::uniform(GroupTag::SO2, 8, None).unwrap();
        let f = |e: &GroupElement| e.theta().cos();
        let v = subgroup_contraction(&net, &store, 0, &GroupElement::identity(GroupTag::SO2), &grid, &f).unwrap();
        assert!(v.abs() < 1e-12);
    }
}
