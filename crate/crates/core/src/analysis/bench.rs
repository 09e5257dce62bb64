//! Wall-clock and multiply-accumulate benchmarks of the convolution
//! executors.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gconv::{apply_kernel, flop_estimate, CostConfig, CostReport, GFeatureMap};
use crate::kernelnet::{KernelNet, KernelRole, KernelSpec, SirenConfig};
use crate::lie::{GroupTag, SubgroupGrid};
use crate::tensor::{count_macs, Graph, Padding, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchConfig {
    pub cost: CostConfig,
    /// Untimed runs before measurement.
    pub warmup: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl BenchConfig {
    pub fn new(cost: CostConfig) -> Self {
        Self {
            cost,
            warmup: 1,
            repeats: 5,
            seed: 0,
        }
    }
}

fn subgroup_for(c: &CostConfig) -> Result<(GroupTag, SubgroupGrid, SubgroupGrid)> {
    if c.s_in > 1 || c.s_out > 1 {
        let trunc = Some(3f64.sqrt());
        let out = SubgroupGrid::uniform_sim2(c.s_out, c.h_out / c.s_out.max(1), trunc)?;
        let inp = SubgroupGrid::uniform_sim2(c.s_in, c.h_in / c.s_in.max(1), trunc)?;
        return Ok((GroupTag::Sim2, out, inp));
    }
    Ok((
        GroupTag::SO2,
        SubgroupGrid::uniform(GroupTag::SO2, c.h_out, None)?,
        SubgroupGrid::uniform(GroupTag::SO2, c.h_in, None)?,
    ))
}

/// Times the executor of one layer with kernels sampled once up front.
/// Reports the median wall-clock of the repeats and the measured MAC count.
pub fn bench_layer(cfg: &BenchConfig) -> Result<CostReport> {
    let c = &cfg.cost;
    if cfg.repeats == 0 {
        return Err(Error::arg("benchmark needs at least one timed run"));
    }
    let (tag, out_grid, in_grid) = subgroup_for(c)?;
    let role = c.factorization.map_or(KernelRole::Lift, KernelRole::Group);
    let spec = KernelSpec {
        subgroup: tag,
        role,
        c_in: c.c_in,
        c_out: c.c_out,
        k: c.k,
        siren: SirenConfig {
            hidden: vec![16],
            ..SirenConfig::default()
        },
        scale_support: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let net = KernelNet::init(&mut store, "bench", spec, &mut rng)?;

    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let ig = c.factorization.map(|_| &in_grid);
    let sk = net.sample(&mut g, &p, &out_grid, ig)?;
    let x = match ig {
        Some(grid) => {
            let t = Tensor::uniform(&[c.batch, c.c_in, grid.len(), c.height, c.width], -1.0, 1.0, &mut rng);
            GFeatureMap::on_grid(g.constant(t), grid.clone())
        }
        None => GFeatureMap::image(g.constant(Tensor::uniform(&[c.batch, c.c_in, c.height, c.width], -1.0, 1.0, &mut rng))),
    };
    let mut macs = 0;
    let mut times = Vec::with_capacity(cfg.repeats);
    for run in 0..cfg.warmup + cfg.repeats {
        let start = Instant::now();
        let (out, m) = count_macs(|| apply_kernel(&mut g, &x, &sk, Padding::Zero));
        let elapsed = start.elapsed().as_secs_f64();
        out?;
        macs = m;
        if run >= cfg.warmup {
            times.push(elapsed);
        }
    }
    times.sort_by(f64::total_cmp);
    Ok(CostReport {
        macs,
        seconds: times[times.len() / 2],
        config: *c,
    })
}

pub fn benchmark(configs: &[BenchConfig]) -> Result<Vec<CostReport>> {
    configs.iter().map(bench_layer).collect()
}

/// Whether every measured count equals the closed form.
pub fn counts_match(reports: &[CostReport]) -> bool {
    reports.iter().all(|r| r.macs == flop_estimate(&r.config).macs)
}

/// `factorization,n_h,k,macs,seconds` rows.
pub fn bench_csv(reports: &[CostReport]) -> String {
    let mut s = String::from("factorization,n_h,k,macs,seconds\n");
    for r in reports {
        let c = &r.config;
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            c.factorization.map_or("lift", |f| f.name()),
            c.h_out,
            c.k,
            r.macs,
            r.seconds
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernelnet::Factorization;

    fn small(f: Option<Factorization>) -> BenchConfig {
        let mut cost = CostConfig::per_position(f, 4, 3);
        cost.c_in = 2;
        cost.c_out = 3;
        cost.height = 6;
        cost.width = 5;
        cost.batch = 2;
        BenchConfig {
            repeats: 1,
            warmup: 0,
            ..BenchConfig::new(cost)
        }
    }

    #[test]
    fn measured_counts_equal_closed_form() {
        let mut cfgs = vec![small(None)];
        cfgs.extend(Factorization::ALL[..5].iter().map(|&f| small(Some(f))));
        let mut hsep = small(Some(Factorization::HSeparable));
        hsep.cost.h_in = 6;
        hsep.cost.h_out = 6;
        hsep.cost.s_in = 2;
        hsep.cost.s_out = 2;
        cfgs.push(hsep);
        let reports = benchmark(&cfgs).unwrap();
        for r in &reports {
            assert_eq!(r.macs, flop_estimate(&r.config).macs, "{r}");
        }
        assert!(counts_match(&reports));
        assert!(bench_csv(&reports).starts_with("factorization,n_h,k,macs,seconds\nlift,4,3,"));
    }
}
