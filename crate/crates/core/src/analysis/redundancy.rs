//! First-principal-component redundancy of kernel stacks and the spread of
//! the subgroup factor.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::kernelnet::{materialize_full_kernel, Factors, KernelNet};
use crate::lie::SubgroupGrid;
use crate::tensor::{Graph, ParamStore, Tensor};

/// Fraction of the variance carried by the leading principal component of
/// `stack`, whose rows are flattened kernels (one per subgroup element).
/// Rows are centred across the stack before the decomposition. A stack with
/// no spread at all counts as fully redundant.
pub fn pca_redundancy(stack: &[Vec<f64>]) -> Result<f64> {
    let n = stack.len();
    if n < 2 {
        return Err(Error::arg(format!("PCA needs at least two kernels, got {n}")));
    }
    let d = stack[0].len();
    if stack.iter().any(|r| r.len() != d) {
        return Err(Error::shape("kernels in a stack must share their size"));
    }
    let mean: Vec<f64> = (0..d).map(|c| stack.iter().map(|r| r[c]).sum::<f64>() / n as f64).collect();
    let centred = DMatrix::from_fn(n, d, |r, c| stack[r][c] - mean[c]);
    // The n×n Gram matrix shares its nonzero spectrum with the covariance.
    let gram = &centred * centred.transpose();
    let eig = SymmetricEigen::new(gram);
    let vals: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = vals.iter().sum();
    let top = vals.iter().cloned().fold(0.0, f64::max);
    let energy: f64 = stack.iter().flatten().map(|v| v * v).sum();
    if total <= 1e-24 * energy || total == 0.0 {
        return Ok(1.0);
    }
    Ok(top / total)
}

/// Per-`(j, i)` PCA ratios of a group kernel: the spatial kernels at output
/// element 0, one per input element, form each stack.
pub fn kernel_pca_ratios(kernel: &KernelNet, store: &ParamStore, grid: &SubgroupGrid) -> Result<Vec<f64>> {
    let full = sample_values(kernel, store, grid)?;
    let full = materialize_full_kernel(&full)?;
    let [_, nt, u, j, i]: [usize; 5] = full
        .shape()
        .try_into()
        .map_err(|_| Error::arg("PCA redundancy is defined for group kernels"))?;
    let d = full.data();
    let mut out = Vec::with_capacity(j * i);
    for cj in 0..j {
        for ci in 0..i {
            let stack: Vec<Vec<f64>> = (0..nt)
                .map(|t| (0..u).map(|q| d[((t * u + q) * j + cj) * i + ci]).collect())
                .collect();
            out.push(pca_redundancy(&stack)?);
        }
    }
    Ok(out)
}

/// Population variance of a list of values.
pub fn kh_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Mean over channel pairs of the variance of `k_H(h₀⁻¹h̃)` along `h̃`, for
/// kernels with a standalone subgroup factor.
pub fn layer_kh_variance(kernel: &KernelNet, store: &ParamStore, grid: &SubgroupGrid) -> Result<f64> {
    let factors = sample_values(kernel, store, grid)?;
    let sub = match &factors {
        Factors::Separable { subgroup, .. }
        | Factors::Gseparable { subgroup, .. }
        | Factors::DGseparable { subgroup, .. } => subgroup,
        Factors::HSeparable { scale, .. } => scale,
        _ => {
            return Err(Error::arg(format!(
                "{} kernels have no standalone subgroup factor",
                factors.factorization().map_or("lifting", |f| f.name())
            )))
        }
    };
    let shape = sub.shape();
    let nt = shape[1];
    let tail: usize = shape[2..].iter().product();
    let d = sub.data();
    let per_pair: Vec<f64> = (0..tail)
        .map(|c| kh_variance(&(0..nt).map(|t| d[t * tail + c]).collect::<Vec<_>>()))
        .collect();
    Ok(per_pair.iter().sum::<f64>() / tail as f64)
}

fn sample_values(kernel: &KernelNet, store: &ParamStore, grid: &SubgroupGrid) -> Result<Factors<Tensor>> {
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let sk = kernel.sample(&mut g, &p, grid, Some(grid))?;
    Ok(sk.values(&g))
}

/// Fixed-width histogram over `[lo, hi]` whose bins hold fractions.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub bins: Vec<f64>,
}

impl Histogram {
    pub fn new(values: &[f64], lo: f64, hi: f64, n_bins: usize) -> Self {
        let mut bins = vec![0.0; n_bins.max(1)];
        let width = (hi - lo) / bins.len() as f64;
        for &v in values {
            let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins.len() - 1);
            bins[b] += 1.0;
        }
        if !values.is_empty() {
            bins.iter_mut().for_each(|b| *b /= values.len() as f64);
        }
        Self { lo, hi, bins }
    }
}

/// Ratios of one layer at initialization and after training.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerRedundancy {
    pub layer: String,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

impl LayerRedundancy {
    pub fn mean_before(&self) -> f64 {
        mean(&self.before)
    }

    pub fn mean_after(&self) -> f64 {
        mean(&self.after)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RedundancyReport {
    pub layers: Vec<LayerRedundancy>,
}

impl RedundancyReport {
    pub fn histograms(&self, n_bins: usize) -> Vec<(Histogram, Histogram)> {
        self.layers
            .iter()
            .map(|l| (Histogram::new(&l.before, 0.0, 1.0, n_bins), Histogram::new(&l.after, 0.0, 1.0, n_bins)))
            .collect()
    }

    /// Layers whose mean ratio went strictly up.
    pub fn layers_increased(&self) -> usize {
        self.layers.iter().filter(|l| l.mean_after() > l.mean_before()).count()
    }

    /// `layer,kernel_id,ratio,phase` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,kernel_id,ratio,phase\n");
        for l in &self.layers {
            for (phase, vals) in [("before", &l.before), ("after", &l.after)] {
                for (id, r) in vals.iter().enumerate() {
                    let _ = writeln!(s, "{},{id},{r},{phase}", l.layer);
                }
            }
        }
        s
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernelnet::{Factorization, KernelRole, KernelSpec, SirenConfig};
    use crate::lie::GroupTag;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn collinear_stack_is_fully_redundant() {
        let k = vec![1.0, -2.0, 0.5, 3.0];
        let k2: Vec<f64> = k.iter().map(|v| 2.0 * v).collect();
        assert!((pca_redundancy(&[k, k2]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_spread_splits_variance() {
        // Centred rows ±e₁, ±e₂ carry equal variance on two axes.
        let stack = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        assert!((pca_redundancy(&stack).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_kernel_is_rejected() {
        assert!(pca_redundancy(&[vec![1.0]]).is_err());
    }

    #[test]
    fn variance_examples() {
        assert_eq!(kh_variance(&[3.0; 5]), 0.0);
        assert_eq!(kh_variance(&[-1.0, 1.0]), 1.0);
        let v = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = v.iter().map(|x| x + 7.0).collect();
        assert!((kh_variance(&v) - kh_variance(&shifted)).abs() < 1e-12);
    }

    #[test]
    fn histogram_bins_sum_to_one() {
        let h = Histogram::new(&[0.1, 0.5, 0.99, 1.0, 0.0], 0.0, 1.0, 10);
        assert!((h.bins.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(h.bins[9], 0.4);
    }

    #[test]
    fn separable_kernels_are_rank_one_along_h() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = KernelSpec {
            subgroup: GroupTag::SO2,
            role: KernelRole::Group(Factorization::Separable),
            c_in: 2,
            c_out: 3,
            k: 3,
            siren: SirenConfig::default(),
            scale_support: 0,
        };
        let net = KernelNet::init(&mut store, "k", spec, &mut rng).unwrap();
        let grid = SubgroupGrid::uniform(GroupTag::SO2, 8, None).unwrap();
        for r in kernel_pca_ratios(&net, &store, &grid).unwrap() {
            assert!((r - 1.0).abs() < 1e-9, "{r}");
        }
        assert!(layer_kh_variance(&net, &store, &grid).unwrap() > 0.0);
    }

    #[test]
    fn csv_lists_both_phases() {
        let rep = RedundancyReport {
            layers: vec![LayerRedundancy {
                layer: "block1.conv1".into(),
                before: vec![0.5],
                after: vec![0.75],
            }],
        };
        assert_eq!(
            rep.to_csv(),
            "layer,kernel_id,ratio,phase\nblock1.conv1,0,0.5,before\nblock1.conv1,0,0.75,after\n"
        );
        assert_eq!(rep.layers_increased(), 1);
    }
}
