use std::fmt;

use crate::kernelnet::Factorization;

/// Sizes that determine the arithmetic of one convolution layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostConfig {
    /// `None` for a lifting convolution.
    pub factorization: Option<Factorization>,
    pub c_in: usize,
    pub c_out: usize,
    /// Input and output subgroup grid sizes (`|H̃|`, `|H|`).
    pub h_in: usize,
    pub h_out: usize,
    /// Scale counts of Sim(2) grids; only read by the H-separable formula.
    pub s_in: usize,
    pub s_out: usize,
    pub k: usize,
    pub height: usize,
    pub width: usize,
    pub batch: usize,
}

impl CostConfig {
    /// A single-channel, single-position layer with `|H̃| = |H| = n_h`.
    pub fn per_position(factorization: Option<Factorization>, n_h: usize, k: usize) -> Self {
        Self {
            factorization,
            c_in: 1,
            c_out: 1,
            h_in: n_h,
            h_out: n_h,
            s_in: 1,
            s_out: 1,
            k,
            height: 1,
            width: 1,
            batch: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostReport {
    pub macs: u64,
    pub seconds: f64,
    pub config: CostConfig,
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        write!(
            f,
            "{} |H|={}→{} k={} {}×{} C={}→{}: {} MACs, {:.6} s",
            c.factorization.map_or("lift", Factorization::name),
            c.h_in,
            c.h_out,
            c.k,
            c.height,
            c.width,
            c.c_in,
            c.c_out,
            self.macs,
            self.seconds
        )
    }
}

/// Multiply-accumulates per batch item and output position.
pub fn macs_per_position(c: &CostConfig) -> u64 {
    let (i, j, ht, h, kk) = (c.c_in, c.c_out, c.h_in, c.h_out, c.k * c.k);
    let n = match c.factorization {
        None => j * h * i * kk,
        Some(Factorization::Nonseparable) => j * h * i * ht * kk,
        Some(Factorization::Separable) => j * h * (i * ht + kk),
        Some(Factorization::Dseparable) => j * i * ht + j * h * ht * kk,
        Some(Factorization::Gseparable) => i * j * h * ht + j * h * i * kk,
        Some(Factorization::DGseparable) => j * i * ht + j * h * ht + j * h * kk,
        Some(Factorization::HSeparable) => {
            let (s, st) = (c.s_out.max(1), c.s_in.max(1));
            let (r, rt) = (h / s, ht / st);
            j * s * i * st * rt + j * s * r * rt + j * s * r * kk
        }
    };
    n as u64
}

/// Closed-form multiply-accumulate count of a layer (no timing).
pub fn flop_estimate(c: &CostConfig) -> CostReport {
    CostReport {
        macs: macs_per_position(c) * (c.batch * c.height * c.width) as u64,
        seconds: 0.0,
        config: *c,
    }
}
