use liegconv::gconv::{apply_kernel, group_conv, lift_conv, GFeatureMap};
use liegconv::kernelnet::{
    materialize_full_kernel, Factorization, Factors, KernelNet, KernelRole, KernelSpec, SirenConfig,
};
use liegconv::lie::{GroupTag, SubgroupGrid};
use liegconv::tensor::{Graph, Padding, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spec(subgroup: GroupTag, role: KernelRole, c_in: usize, c_out: usize, k: usize) -> KernelSpec {
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

/// Direct evaluation of the discrete group convolution, term by term.
fn brute_force(f: &Tensor, full: &Tensor, out_grid: &SubgroupGrid, k: usize, padding: Padding) -> Tensor {
    let [b, ci, nt, y, x]: [usize; 5] = f.shape().try_into().unwrap();
    let [nh, _, _, j, _]: [usize; 5] = full.shape().try_into().unwrap();
    let r = (k / 2) as isize;
    let mut out = Tensor::zeros(&[b, j, nh, y, x]);
    let dets: Vec<f64> = out_grid.elements().iter().map(|e| e.determinant()).collect();
    for bb in 0..b {
        for jj in 0..j {
            for h in 0..nh {
                for yy in 0..y {
                    for xx in 0..x {
                        let mut acc = 0.0;
                        for ht in 0..nt {
                            for ii in 0..ci {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let sy = yy as isize + ky as isize - r;
                                        let sx = xx as isize + kx as isize - r;
                                        let (sy, sx) = match padding {
                                            Padding::Zero => {
                                                if sy < 0 || sx < 0 || sy >= y as isize || sx >= x as isize {
                                                    continue;
                                                }
                                                (sy as usize, sx as usize)
                                            }
                                            Padding::Circular => (
                                                sy.rem_euclid(y as isize) as usize,
                                                sx.rem_euclid(x as isize) as usize,
                                            ),
                                        };
                                        acc += full.at(&[h, ht, ky * k + kx, jj, ii])
                                            * f.at(&[bb, ii, ht, sy, sx]);
                                    }
                                }
                            }
                        }
                        let idx = (((bb * j + jj) * nh + h) * y + yy) * x + xx;
                        out.data_mut()[idx] = acc / dets[h];
                    }
                }
            }
        }
    }
    out
}

#[test]
fn dense_group_conv_matches_brute_force_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = SubgroupGrid::uniform(GroupTag::SO2, 2, None).unwrap();
    let mut store = ParamStore::new();
    let net = KernelNet::init(
        &mut store,
        "k",
        spec(GroupTag::SO2, KernelRole::Group(Factorization::Nonseparable), 2, 3, 3),
        &mut rng,
    )
    .unwrap();
    for padding in [Padding::Zero, Padding::Circular] {
        let f = Tensor::uniform(&[1, 2, 2, 3, 3], -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let sk = net.sample(&mut g, &p, &grid, Some(&grid)).unwrap();
        let Factors::Nonseparable { full } = sk.factors else { unreachable!() };
        let fv = g.constant(f.clone());
        let out = group_conv(&mut g, &GFeatureMap::on_grid(fv, grid.clone()), full, &grid, 3, padding).unwrap();
        let want = brute_force(&f, g.value(full), &grid, 3, padding);
        assert!(g.value(out.value).rel_diff(&want) < 1e-12);
    }
}

#[test]
fn factorized_paths_match_materialized_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cases = [
        (GroupTag::SO2, SubgroupGrid::uniform(GroupTag::SO2, 4, None).unwrap()),
        (GroupTag::Rplus, SubgroupGrid::uniform(GroupTag::Rplus, 3, Some(3f64.sqrt())).unwrap()),
        (GroupTag::Sim2, SubgroupGrid::uniform_sim2(2, 4, Some(3f64.sqrt())).unwrap()),
    ];
    for (tag, grid) in cases {
        for fac in Factorization::ALL {
            if fac == Factorization::HSeparable && tag != GroupTag::Sim2 {
                continue;
            }
            let mut store = ParamStore::new();
            let net = KernelNet::init(&mut store, "k", spec(tag, KernelRole::Group(fac), 3, 2, 3), &mut rng).unwrap();
            let f = Tensor::uniform(&[2, 3, grid.len(), 6, 5], -1.0, 1.0, &mut rng);
            let mut g = Graph::new();
            let p = store.bind(&mut g, false);
            let sk = net.sample(&mut g, &p, &grid, Some(&grid)).unwrap();
            let fv = g.constant(f.clone());
            let fm = GFeatureMap::on_grid(fv, grid.clone());
            let fast = apply_kernel(&mut g, &fm, &sk, Padding::Zero).unwrap();
            let full = materialize_full_kernel(&sk.values(&g)).unwrap();
            let fullv = g.constant(full);
            let dense = group_conv(&mut g, &fm, fullv, &grid, 3, Padding::Zero).unwrap();
            let err = g.value(fast.value).rel_diff(g.value(dense.value));
            assert!(err < 1e-10, "{tag} {fac}: {err}");
        }
    }
}

fn rot90(t: &Tensor) -> Tensor {
    let s = t.shape().to_vec();
    let n = s[s.len() - 1];
    assert_eq!(n, s[s.len() - 2]);
    Tensor::from_fn(&s, |i| {
        let (plane, row, col) = (i / (n * n), (i / n) % n, i % n);
        t.data()[plane * n * n + (n - 1 - col) * n + row]
    })
}

/// `out'[.., h, ..] = out[.., h − 1, ..]` on a C4 axis at position 2.
fn shift_h(t: &Tensor) -> Tensor {
    let s = t.shape().to_vec();
    let nh = s[2];
    let inner: usize = s[3..].iter().product();
    Tensor::from_fn(&s, |i| {
        let (outer, h, rest) = (i / (nh * inner), (i / inner) % nh, i % inner);
        t.data()[(outer * nh + (h + nh - 1) % nh) * inner + rest]
    })
}

#[test]
fn c4_lift_and_group_conv_are_exactly_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = SubgroupGrid::uniform(GroupTag::SO2, 4, None).unwrap();
    let mut store = ParamStore::new();
    let lift = KernelNet::init(&mut store, "l", spec(GroupTag::SO2, KernelRole::Lift, 1, 2, 5), &mut rng).unwrap();
    let gc = KernelNet::init(
        &mut store,
        "g",
        spec(GroupTag::SO2, KernelRole::Group(Factorization::Separable), 2, 2, 3),
        &mut rng,
    )
    .unwrap();
    let run = |img: &Tensor| {
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(img.clone());
        let lk = lift.sample(&mut g, &p, &grid, None).unwrap();
        let l = lift_conv(&mut g, x, &lk, Padding::Circular).unwrap();
        let gk = gc.sample(&mut g, &p, &grid, Some(&grid)).unwrap();
        let o = apply_kernel(&mut g, &l, &gk, Padding::Circular).unwrap();
        (g.value(l.value).clone(), g.value(o.value).clone())
    };
    let img = Tensor::uniform(&[1, 1, 9, 9], -1.0, 1.0, &mut rng);
    let (l, o) = run(&img);
    let (lr, or) = run(&rot90(&img));
    assert!(lr.max_abs_diff(&shift_h(&rot90(&l))) < 1e-12);
    assert!(or.max_abs_diff(&shift_h(&rot90(&o))) < 1e-12);
}
