//! Oracle and property checks runnable outside the test harness.

use std::fmt;
use std::rc::Rc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{bench_layer, BenchConfig};
use crate::error::Result;
use crate::gconv::{apply_kernel, flop_estimate, group_conv, CostConfig, GFeatureMap};
use crate::kernelnet::{materialize_full_kernel, Factorization, KernelNet, KernelRole, KernelSpec, SirenConfig};
use crate::lie::{GroupElement, GroupTag, SubgroupGrid};
use crate::model::{build_model, GCNNConfig};
use crate::tensor::{grad_check_many, Bound, Graph, Padding, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// Worst error observed across all cases.
    pub worst: f64,
    pub tolerance: f64,
    pub cases: usize,
    pub seconds: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst.is_finite() && self.worst <= self.tolerance
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: worst {:.3e} (tol {:.0e}, {} cases, {:.2} s)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.cases,
            self.seconds
        )
    }
}

fn timed(name: &str, tolerance: f64, run: impl FnOnce() -> Result<(f64, usize)>) -> Result<CheckResult> {
    let start = Instant::now();
    let (worst, cases) = run()?;
    Ok(CheckResult {
        name: name.to_string(),
        worst,
        tolerance,
        cases,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn random_element<R: Rng + ?Sized>(tag: GroupTag, rng: &mut R) -> GroupElement {
    let x = if tag.has_translation() {
        [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]
    } else {
        [0.0, 0.0]
    };
    let theta = if tag.has_rotation() { rng.gen_range(0.0..std::f64::consts::TAU) } else { 0.0 };
    let s = if tag.has_scale() { rng.gen_range(-2.0f64..2.0).exp() } else { 1.0 };
    GroupElement::new(tag, x, theta, s).expect("coordinates match the tag")
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn matrix_gap(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> f64 {
    let mut m = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            m = m.max((a[i][j] - b[i][j]).abs());
        }
    }
    m
}

/// Associativity, identity, inverses, agreement with homogeneous matrices,
/// exp/log round trips and multiplicativity of the determinant, for
/// `cases` random triples in each of the six groups. Errors are relative to
/// the magnitude of the quantities compared.
pub fn group_axioms(cases: usize, seed: u64) -> Result<CheckResult> {
    timed("group axioms", 1e-10, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for tag in GroupTag::ALL {
            let e = GroupElement::identity(tag);
            for _ in 0..cases {
                let a = random_element(tag, &mut rng);
                let b = random_element(tag, &mut rng);
                let c = random_element(tag, &mut rng);
                let ab = a.product(&b)?;
                let size = 1.0 + ab.x()[0].abs().max(ab.x()[1].abs());
                let lhs = ab.product(&c)?;
                let rhs = a.product(&b.product(&c)?)?;
                worst = worst.max(lhs.max_deviation(&rhs) / (1.0 + lhs.x()[0].abs().max(lhs.x()[1].abs())));
                worst = worst.max(a.product(&e)?.max_deviation(&a));
                worst = worst.max(e.product(&a)?.max_deviation(&a));
                worst = worst.max(a.product(&a.inverse())?.max_deviation(&e) / (1.0 + a.x()[0].abs().max(a.x()[1].abs())));
                worst = worst.max(matrix_gap(&ab.matrix(), &matmul3(&a.matrix(), &b.matrix())) / size);
                worst = worst.max(a.log().exp().max_deviation(&a));
                let d = ab.determinant();
                worst = worst.max((d - a.determinant() * b.determinant()).abs() / d);
            }
        }
        Ok((worst, cases * GroupTag::ALL.len()))
    })
}

fn oracle_spec(subgroup: GroupTag, role: KernelRole, c_in: usize, c_out: usize, k: usize) -> KernelSpec {
    KernelSpec {
        subgroup,
        role,
        c_in,
        c_out,
        k,
        siren: SirenConfig {
            hidden: vec![16, 16],
            ..SirenConfig::default()
        },
        scale_support: 2,
    }
}

/// A random subgroup grid with at most `max_h` elements that the
/// factorization accepts.
fn random_grid<R: Rng + ?Sized>(fac: Factorization, max_h: usize, rng: &mut R) -> Result<SubgroupGrid> {
    let trunc = Some(3f64.sqrt());
    let choice = if fac == Factorization::HSeparable { 2 } else { rng.gen_range(0..3) };
    match choice {
        0 => SubgroupGrid::uniform(GroupTag::SO2, rng.gen_range(1..=max_h), None),
        1 => SubgroupGrid::uniform(GroupTag::Rplus, rng.gen_range(1..=max_h), trunc),
        _ => {
            let s = rng.gen_range(1..=2);
            SubgroupGrid::uniform_sim2(s, rng.gen_range(1..=max_h / s), trunc)
        }
    }
}

/// For every factorization, `instances` random layers (channels ≤ 4,
/// `|H| ≤ 8`, 8×8 maps): factorized executor against the dense executor on
/// the materialized kernel. Reports the worst relative error.
pub fn factorization_equivalence(instances: usize, seed: u64) -> Result<CheckResult> {
    timed("factorized vs materialized", 1e-10, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for fac in Factorization::ALL {
            for _ in 0..instances {
                let grid = random_grid(fac, 8, &mut rng)?;
                let (ci, co) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
                let k = [1, 3, 5][rng.gen_range(0..3)];
                let padding = if rng.gen_bool(0.5) { Padding::Zero } else { Padding::Circular };
                let mut store = ParamStore::new();
                let net = KernelNet::init(
                    &mut store,
                    "k",
                    oracle_spec(grid.tag(), KernelRole::Group(fac), ci, co, k),
                    &mut rng,
                )?;
                let f = Tensor::uniform(&[2, ci, grid.len(), 8, 8], -1.0, 1.0, &mut rng);
                let mut g = Graph::new();
                let p = store.bind(&mut g, false);
                let sk = net.sample(&mut g, &p, &grid, Some(&grid))?;
                let fv = g.constant(f);
                let fm = GFeatureMap::on_grid(fv, grid.clone());
                let fast = apply_kernel(&mut g, &fm, &sk, padding)?;
                let full = g.constant(materialize_full_kernel(&sk.values(&g))?);
                let dense = group_conv(&mut g, &fm, full, &grid, k, padding)?;
                worst = worst.max(g.value(fast.value).rel_diff(g.value(dense.value)));
            }
        }
        Ok((worst, instances * Factorization::ALL.len()))
    })
}

/// Rotates every trailing square plane by a quarter turn: `out[r][c] =
/// in[n−1−c][r]`.
pub fn rot90(t: &Tensor) -> Tensor {
    let s = t.shape().to_vec();
    let n = s[s.len() - 1];
    Tensor::from_fn(&s, |i| {
        let (plane, row, col) = (i / (n * n), (i / n) % n, i % n);
        t.data()[plane * n * n + (n - 1 - col) * n + row]
    })
}

/// Cyclic shift `out[.., h, ..] = in[.., h − 1, ..]` along axis 2.
pub fn shift_h(t: &Tensor) -> Tensor {
    let s = t.shape().to_vec();
    let nh = s[2];
    let inner: usize = s[3..].iter().product();
    Tensor::from_fn(&s, |i| {
        let (outer, h, rest) = (i / (nh * inner), (i / inner) % nh, i % inner);
        t.data()[(outer * nh + (h + nh - 1) % nh) * inner + rest]
    })
}

/// Lifting plus group convolution on a C4 grid with circular padding, for
/// every group factorization: rotating the input by `m` quarter turns must
/// rotate the output planes and cycle the H axis by `m`.
pub fn c4_equivariance(inputs: usize, seed: u64) -> Result<CheckResult> {
    timed("C4 exact equivariance", 1e-12, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = SubgroupGrid::uniform(GroupTag::SO2, 4, None)?;
        let mut worst = 0.0f64;
        let mut cases = 0;
        for fac in &Factorization::ALL[..5] {
            let mut store = ParamStore::new();
            let lift = KernelNet::init(&mut store, "l", oracle_spec(GroupTag::SO2, KernelRole::Lift, 1, 2, 5), &mut rng)?;
            let gc = KernelNet::init(
                &mut store,
                "g",
                oracle_spec(GroupTag::SO2, KernelRole::Group(*fac), 2, 3, 3),
                &mut rng,
            )?;
            let run = |img: &Tensor| -> Result<(Tensor, Tensor)> {
                let mut g = Graph::new();
                let p = store.bind(&mut g, false);
                let x = g.constant(img.clone());
                let lk = lift.sample(&mut g, &p, &grid, None)?;
                let l = apply_kernel(&mut g, &GFeatureMap::image(x), &lk, Padding::Circular)?;
                let gk = gc.sample(&mut g, &p, &grid, Some(&grid))?;
                let o = apply_kernel(&mut g, &l, &gk, Padding::Circular)?;
                Ok((g.value(l.value).clone(), g.value(o.value).clone()))
            };
            for _ in 0..inputs {
                let img = Tensor::uniform(&[1, 1, 9, 9], -1.0, 1.0, &mut rng);
                let (mut l_ref, mut o_ref) = run(&img)?;
                let mut moved = img.clone();
                for _ in 1..4 {
                    moved = rot90(&moved);
                    l_ref = shift_h(&rot90(&l_ref));
                    o_ref = shift_h(&rot90(&o_ref));
                    let (l, o) = run(&moved)?;
                    worst = worst.max(l.max_abs_diff(&l_ref) / l_ref.max_abs().max(1e-300));
                    worst = worst.max(o.max_abs_diff(&o_ref) / o_ref.max_abs().max(1e-300));
                    cases += 1;
                }
            }
        }
        Ok((worst, cases))
    })
}

/// Finite-difference checks of every executor (with respect to the input
/// and all SIREN parameters) and of the full model loss.
pub fn gradient_checks(seed: u64) -> Result<CheckResult> {
    timed("gradient checks", 1e-4, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        let mut cases = 0;
        let so2 = SubgroupGrid::uniform(GroupTag::SO2, 3, None)?;
        let sim2 = SubgroupGrid::uniform_sim2(2, 2, Some(3f64.sqrt()))?;
        let mut roles: Vec<(KernelRole, &SubgroupGrid)> = vec![(KernelRole::Lift, &so2)];
        for fac in Factorization::ALL {
            let grid = if fac == Factorization::HSeparable { &sim2 } else { &so2 };
            roles.push((KernelRole::Group(fac), grid));
        }
        for (role, grid) in roles {
            let mut store = ParamStore::new();
            let spec = KernelSpec {
                siren: SirenConfig {
                    hidden: vec![8],
                    omega0: 3.0,
                    ..SirenConfig::default()
                },
                ..oracle_spec(grid.tag(), role, 2, 2, 3)
            };
            let net = KernelNet::init(&mut store, "k", spec, &mut rng)?;
            let input = match role {
                KernelRole::Lift => Tensor::uniform(&[1, 2, 4, 4], -1.0, 1.0, &mut rng),
                KernelRole::Group(_) => Tensor::uniform(&[1, 2, grid.len(), 4, 4], -1.0, 1.0, &mut rng),
            };
            let mut inputs = vec![input];
            inputs.extend(store.ids().map(|id| store.get(id).clone()));
            let out_len = 2 * grid.len() * 16;
            let proj = Rc::new(Tensor::uniform(&[1, 2, grid.len(), 4, 4], -1.0, 1.0, &mut rng));
            debug_assert_eq!(proj.numel(), out_len);
            let err = grad_check_many(
                |g, vars| {
                    let bound = Bound::from_vars(vars[1..].to_vec());
                    let ig = matches!(role, KernelRole::Group(_)).then_some(grid);
                    let sk = net.sample(g, &bound, grid, ig)?;
                    let f = match ig {
                        Some(gr) => GFeatureMap::on_grid(vars[0], gr.clone()),
                        None => GFeatureMap::image(vars[0]),
                    };
                    let out = apply_kernel(g, &f, &sk, Padding::Zero)?;
                    g.dot_const(out.value, proj.clone())
                },
                &inputs,
                1e-6,
                Some(12),
            )?;
            worst = worst.max(err);
            cases += 1;
        }
        worst = worst.max(model_gradient_check(seed)?);
        Ok((worst, cases + 1))
    })
}

/// Finite differences of the cross-entropy of a small model with respect to
/// a sample of every parameter tensor.
fn model_gradient_check(seed: u64) -> Result<f64> {
    let cfg = GCNNConfig {
        n_rotations: 2,
        channels: [2, 2, 3],
        stencil: 3,
        siren: SirenConfig {
            hidden: vec![6],
            omega0: 3.0,
            ..SirenConfig::default()
        },
        head_hidden: 4,
        classes: 3,
        seed,
        ..GCNNConfig::default()
    };
    let model = build_model(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let images = Tensor::uniform(&[3, 1, 8, 8], 0.0, 1.0, &mut rng);
    let labels = [0, 2, 1];
    let grids = model.uniform_grids()?;
    let ids: Vec<_> = model.store.ids().collect();
    let inputs: Vec<Tensor> = ids.iter().map(|&id| model.store.get(id).clone()).collect();
    grad_check_many(
        |g, vars| {
            let p = Bound::from_vars(vars.to_vec());
            let x = g.constant(images.clone());
            let (trace, _) = model.forward(g, &p, x, &grids, true)?;
            g.softmax_cross_entropy(trace.logits, &labels)
        },
        &inputs,
        1e-6,
        Some(4),
    )
}

/// Measured multiply-accumulate counts of every executor against the closed
/// form, reported as the largest relative gap.
pub fn mac_counts() -> Result<CheckResult> {
    timed("MAC counts", 0.0, || {
        let mut worst = 0.0f64;
        let mut cases = 0;
        let mut configs: Vec<CostConfig> = vec![CostConfig::per_position(None, 4, 5)];
        configs.extend(Factorization::ALL[..5].iter().map(|&f| CostConfig::per_position(Some(f), 8, 5)));
        let mut h = CostConfig::per_position(Some(Factorization::HSeparable), 6, 3);
        h.s_in = 2;
        h.s_out = 2;
        configs.push(h);
        for mut c in configs {
            c.c_in = 3;
            c.c_out = 2;
            c.height = 7;
            c.width = 6;
            let r = bench_layer(&BenchConfig {
                warmup: 0,
                repeats: 1,
                ..BenchConfig::new(c)
            })?;
            let want = flop_estimate(&c).macs;
            worst = worst.max((r.macs as f64 - want as f64).abs() / want as f64);
            cases += 1;
        }
        Ok((worst, cases))
    })
}

/// The quick suite run by the command line `selftest`.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        group_axioms(1000, seed)?,
        factorization_equivalence(10, seed)?,
        c4_equivariance(3, seed)?,
        gradient_checks(seed)?,
        mac_counts()?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn rot90_four_times_is_identity() {
        let t = Tensor::from_fn(&[2, 3, 3], |i| i as f64);
        assert_eq!(rot90(&rot90(&rot90(&rot90(&t)))), t);
        let q = rot90(&Tensor::from_fn(&[2, 2], |i| i as f64));
        assert_eq!(q.data(), &[2.0, 0.0, 3.0, 1.0]);
    }

    #[test]
    fn quick_suite_passes() {
        for r in run_all(0).unwrap() {
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn quarter_turn_is_exact_on_c4_grids() {
        let h = GroupElement::rotation(FRAC_PI_2);
        let grid = SubgroupGrid::uniform(GroupTag::SO2, 4, None).unwrap();
        let moved = grid.perturb_by(&h).unwrap();
        for (i, e) in moved.elements().iter().enumerate() {
            assert!(e.max_deviation(&grid.elements()[(i + 1) % 4]) < 1e-15);
        }
    }
}
