//! Raw stride-1 "same" grouped 2-D convolution (cross-correlation) kernels.
//!
//! Input `(B, G·Cg_in, H, W)`, weight `(G·Cg_out, Cg_in, k, k)`, output
//! `(B, G·Cg_out, H, W)`. Dense groups go through im2col + GEMM; 1×1 kernels
//! skip im2col; depthwise groups use shifted-row loops.

use std::cell::Cell;

/// Border handling for "same" convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    Zero,
    Circular,
}

impl std::str::FromStr for Padding {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zero" => Ok(Padding::Zero),
            "circular" => Ok(Padding::Circular),
            _ => Err(crate::Error::arg(format!("unknown padding `{s}`"))),
        }
    }
}

impl std::fmt::Display for Padding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Padding::Zero => "zero",
            Padding::Circular => "circular",
        })
    }
}

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

/// Runs `f` and returns the multiply-accumulates its forward convolutions
/// performed on this thread.
pub fn count_macs<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let before = MACS.with(|m| m.get());
    let out = f();
    let after = MACS.with(|m| m.get());
    (out, after - before)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub groups: usize,
    pub cin_g: usize,
    pub cout_g: usize,
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub padding: Padding,
}

impl ConvGeometry {
    pub fn macs(&self) -> u64 {
        (self.batch * self.groups * self.cout_g * self.cin_g * self.k * self.k * self.height * self.width)
            as u64
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn in_len(&self) -> usize {
        self.batch * self.groups * self.cin_g * self.plane()
    }

    fn out_len(&self) -> usize {
        self.batch * self.groups * self.cout_g * self.plane()
    }

    fn w_len(&self) -> usize {
        self.groups * self.cout_g * self.cin_g * self.k * self.k
    }

    fn depthwise(&self) -> bool {
        self.cin_g == 1 && self.cout_g == 1
    }
}

/// `C = alpha·A·B + beta·C` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, cc: usize, rs: usize, cs: usize| (r - 1) * rs + (cc - 1) * cs;
    if k > 0 {
        assert!(a.len() > last(m, k, rsa, csa));
        assert!(b.len() > last(k, n, rsb, csb));
    }
    assert!(c.len() > last(m, n, rsc, csc));
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Source row for output row `y` shifted by `d`, or `None` when it falls in
/// the zero border.
#[inline]
fn src_index(y: usize, d: isize, n: usize, padding: Padding) -> Option<usize> {
    let s = y as isize + d;
    if s >= 0 && (s as usize) < n {
        Some(s as usize)
    } else {
        match padding {
            Padding::Zero => None,
            Padding::Circular => Some(s.rem_euclid(n as isize) as usize),
        }
    }
}

/// Calls `f(dst_range, src_start)` for the runs of a row shifted by `dx`:
/// output columns `dst_range` read source columns starting at `src_start`.
#[inline]
fn row_runs(w: usize, dx: isize, padding: Padding, mut f: impl FnMut(std::ops::Range<usize>, usize)) {
    let lo = (-dx).max(0) as usize;
    let hi = (w as isize - dx).min(w as isize).max(0) as usize;
    if lo < hi {
        f(lo..hi, (lo as isize + dx) as usize);
    }
    if padding == Padding::Circular {
        if lo > 0 {
            // left wrap: columns 0..lo read w+dx..
            f(0..lo.min(w), (w as isize + dx) as usize);
        }
        if hi < w {
            f(hi..w, 0);
        }
    }
}

fn im2col(src: &[f64], c: usize, h: usize, w: usize, k: usize, padding: Padding, cols: &mut [f64]) {
    let r = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &src[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - r;
                let dx = kx as isize - r;
                for y in 0..h {
                    let out_row = &mut dst[y * w..(y + 1) * w];
                    match src_index(y, dy, h, padding) {
                        None => out_row.fill(0.0),
                        Some(sy) => {
                            if padding == Padding::Zero {
                                out_row.fill(0.0);
                            }
                            let src_row = &plane[sy * w..(sy + 1) * w];
                            row_runs(w, dx, padding, |range, s0| {
                                let n = range.len();
                                out_row[range].copy_from_slice(&src_row[s0..s0 + n]);
                            });
                        }
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, padding: Padding, dst: &mut [f64]) {
    let r = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dst[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - r;
                let dx = kx as isize - r;
                for y in 0..h {
                    if let Some(sy) = src_index(y, dy, h, padding) {
                        let g_row = &src[y * w..(y + 1) * w];
                        let t_row = &mut plane[sy * w..(sy + 1) * w];
                        row_runs(w, dx, padding, |range, s0| {
                            for (t, g) in t_row[s0..s0 + range.len()].iter_mut().zip(&g_row[range]) {
                                *t += g;
                            }
                        });
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(x: &[f64], w: &[f64], geo: &ConvGeometry) -> Vec<f64> {
    assert_eq!(x.len(), geo.in_len());
    assert_eq!(w.len(), geo.w_len());
    assert!(geo.k % 2 == 1, "stencil must be odd");
    MACS.with(|m| m.set(m.get() + geo.macs()));
    let mut out = vec![0.0; geo.out_len()];
    let hw = geo.plane();
    if geo.depthwise() {
        depthwise_forward(x, w, geo, &mut out);
        return out;
    }
    let kk = geo.k * geo.k;
    let rows = geo.cin_g * kk;
    let mut cols = if geo.k == 1 { Vec::new() } else { vec![0.0; rows * hw] };
    for b in 0..geo.batch {
        for g in 0..geo.groups {
            let xi = ((b * geo.groups + g) * geo.cin_g) * hw;
            let xs = &x[xi..xi + geo.cin_g * hw];
            let wi = g * geo.cout_g * rows;
            let ws = &w[wi..wi + geo.cout_g * rows];
            let oi = ((b * geo.groups + g) * geo.cout_g) * hw;
            let os = &mut out[oi..oi + geo.cout_g * hw];
            let colsref: &[f64] = if geo.k == 1 {
                xs
            } else {
                im2col(xs, geo.cin_g, geo.height, geo.width, geo.k, geo.padding, &mut cols);
                &cols
            };
            gemm(geo.cout_g, rows, hw, ws, (rows, 1), colsref, (hw, 1), 0.0, os, (hw, 1));
        }
    }
    out
}

/// Returns `(dL/dx, dL/dw)`, skipping whichever is not requested.
pub fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    geo: &ConvGeometry,
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    assert_eq!(gy.len(), geo.out_len());
    let mut gx = need_x.then(|| vec![0.0; geo.in_len()]);
    let mut gw = need_w.then(|| vec![0.0; geo.w_len()]);
    if geo.depthwise() {
        depthwise_backward(x, w, gy, geo, gx.as_deref_mut(), gw.as_deref_mut());
        return (gx, gw);
    }
    let hw = geo.plane();
    let kk = geo.k * geo.k;
    let rows = geo.cin_g * kk;
    let mut cols = if geo.k == 1 { Vec::new() } else { vec![0.0; rows * hw] };
    let mut gcols = if geo.k == 1 || !need_x {
        Vec::new()
    } else {
        vec![0.0; rows * hw]
    };
    for b in 0..geo.batch {
        for g in 0..geo.groups {
            let xi = ((b * geo.groups + g) * geo.cin_g) * hw;
            let wi = g * geo.cout_g * rows;
            let oi = ((b * geo.groups + g) * geo.cout_g) * hw;
            let gys = &gy[oi..oi + geo.cout_g * hw];
            if let Some(gw) = gw.as_deref_mut() {
                let xs = &x[xi..xi + geo.cin_g * hw];
                let colsref: &[f64] = if geo.k == 1 {
                    xs
                } else {
                    im2col(xs, geo.cin_g, geo.height, geo.width, geo.k, geo.padding, &mut cols);
                    &cols
                };
                let gws = &mut gw[wi..wi + geo.cout_g * rows];
                // gW (cout, rows) += gY (cout, hw) · colsᵀ (hw, rows)
                gemm(geo.cout_g, hw, rows, gys, (hw, 1), colsref, (1, hw), 1.0, gws, (rows, 1));
            }
            if let Some(gx) = gx.as_deref_mut() {
                let ws = &w[wi..wi + geo.cout_g * rows];
                let gxs = &mut gx[xi..xi + geo.cin_g * hw];
                if geo.k == 1 {
                    gemm(geo.cin_g, geo.cout_g, hw, ws, (1, rows), gys, (hw, 1), 1.0, gxs, (hw, 1));
                } else {
                    // gcols (rows, hw) = Wᵀ (rows, cout) · gY (cout, hw)
                    gemm(rows, geo.cout_g, hw, ws, (1, rows), gys, (hw, 1), 0.0, &mut gcols, (hw, 1));
                    col2im(&gcols, geo.cin_g, geo.height, geo.width, geo.k, geo.padding, gxs);
                }
            }
        }
    }
    (gx, gw)
}

fn depthwise_forward(x: &[f64], w: &[f64], geo: &ConvGeometry, out: &mut [f64]) {
    let (h, wd, k) = (geo.height, geo.width, geo.k);
    let hw = h * wd;
    let r = (k / 2) as isize;
    let channels = geo.groups;
    for b in 0..geo.batch {
        for c in 0..channels {
            let plane = &x[(b * channels + c) * hw..(b * channels + c + 1) * hw];
            let o = &mut out[(b * channels + c) * hw..(b * channels + c + 1) * hw];
            let wc = &w[c * k * k..(c + 1) * k * k];
            for ky in 0..k {
                let dy = ky as isize - r;
                for y in 0..h {
                    let Some(sy) = src_index(y, dy, h, geo.padding) else {
                        continue;
                    };
                    let src_row = &plane[sy * wd..(sy + 1) * wd];
                    let o_row = &mut o[y * wd..(y + 1) * wd];
                    for kx in 0..k {
                        let wv = wc[ky * k + kx];
                        let dx = kx as isize - r;
                        row_runs(wd, dx, geo.padding, |range, s0| {
                            for (ov, sv) in o_row[range.clone()].iter_mut().zip(&src_row[s0..s0 + range.len()]) {
                                *ov += wv * sv;
                            }
                        });
                    }
                }
            }
        }
    }
}

fn depthwise_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    geo: &ConvGeometry,
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
) {
    let (h, wd, k) = (geo.height, geo.width, geo.k);
    let hw = h * wd;
    let r = (k / 2) as isize;
    let channels = geo.groups;
    for b in 0..geo.batch {
        for c in 0..channels {
            let off = (b * channels + c) * hw;
            let plane = &x[off..off + hw];
            let g = &gy[off..off + hw];
            for ky in 0..k {
                let dy = ky as isize - r;
                for kx in 0..k {
                    let dx = kx as isize - r;
                    let wv = w[c * k * k + ky * k + kx];
                    let mut acc = 0.0;
                    for y in 0..h {
                        let Some(sy) = src_index(y, dy, h, geo.padding) else {
                            continue;
                        };
                        let g_row = &g[y * wd..(y + 1) * wd];
                        let s_row = sy * wd;
                        row_runs(wd, dx, geo.padding, |range, s0| {
                            let n = range.len();
                            if gw.is_some() {
                                acc += g_row[range.clone()]
                                    .iter()
                                    .zip(&plane[s_row + s0..s_row + s0 + n])
                                    .map(|(a, b)| a * b)
                                    .sum::<f64>();
                            }
                            if let Some(gx) = gx.as_deref_mut() {
                                let t = &mut gx[off + s_row + s0..off + s_row + s0 + n];
                                for (tv, gv) in t.iter_mut().zip(&g_row[range]) {
                                    *tv += wv * gv;
                                }
                            }
                        });
                    }
                    if let Some(gw) = gw.as_deref_mut() {
                        gw[c * k * k + ky * k + kx] += acc;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct six-loop convolution.
    fn naive(x: &[f64], w: &[f64], geo: &ConvGeometry) -> Vec<f64> {
        let (h, wd, k) = (geo.height, geo.width, geo.k);
        let r = (k / 2) as isize;
        let cin = geo.groups * geo.cin_g;
        let cout = geo.groups * geo.cout_g;
        let mut out = vec![0.0; geo.batch * cout * h * wd];
        for b in 0..geo.batch {
            for o in 0..cout {
                let g = o / geo.cout_g;
                for y in 0..h {
                    for xx in 0..wd {
                        let mut acc = 0.0;
                        for ci in 0..geo.cin_g {
                            let c = g * geo.cin_g + ci;
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = y as isize + ky as isize - r;
                                    let sx = xx as isize + kx as isize - r;
                                    let (sy, sx) = match geo.padding {
                                        Padding::Zero => {
                                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                                continue;
                                            }
                                            (sy as usize, sx as usize)
                                        }
                                        Padding::Circular => (
                                            sy.rem_euclid(h as isize) as usize,
                                            sx.rem_euclid(wd as isize) as usize,
                                        ),
                                    };
                                    acc += x[((b * cin + c) * h + sy) * wd + sx]
                                        * w[((o * geo.cin_g + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                        out[((b * cout + o) * h + y) * wd + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(groups, cin_g, cout_g, k) in &[(1, 3, 2, 3), (2, 2, 3, 5), (4, 1, 1, 3), (3, 1, 1, 5), (2, 3, 2, 1)] {
            for padding in [Padding::Zero, Padding::Circular] {
                let geo = ConvGeometry {
                    batch: 2,
                    groups,
                    cin_g,
                    cout_g,
                    height: 5,
                    width: 7,
                    k,
                    padding,
                };
                let x: Vec<f64> = (0..geo.in_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let w: Vec<f64> = (0..geo.w_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let got = conv2d_forward(&x, &w, &geo);
                let want = naive(&x, &w, &geo);
                for (a, b) in got.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12, "{geo:?}");
                }
            }
        }
    }

    #[test]
    fn mac_counter_tracks_forward_calls() {
        let geo = ConvGeometry {
            batch: 1,
            groups: 2,
            cin_g: 3,
            cout_g: 1,
            height: 4,
            width: 4,
            k: 3,
            padding: Padding::Zero,
        };
        let (_, macs) = count_macs(|| conv2d_forward(&vec![0.0; geo.in_len()], &vec![0.0; geo.w_len()], &geo));
        assert_eq!(macs, 2 * 3 * 9 * 16);
    }
}
