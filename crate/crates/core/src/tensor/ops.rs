//! Differentiable operations recorded on a [`Graph`].

use std::rc::Rc;

use super::conv::{conv2d_backward, conv2d_forward, ConvGeometry, Padding};
use super::graph::{Graph, Var};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Sine,
    Relu,
    LeakyRelu,
    Swish,
}

impl Activation {
    pub const LEAKY_SLOPE: f64 = 0.01;

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sine => "sine",
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Swish => "swish",
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sine" | "sin" => Ok(Activation::Sine),
            "relu" => Ok(Activation::Relu),
            "leaky_relu" | "leakyrelu" => Ok(Activation::LeakyRelu),
            "swish" => Ok(Activation::Swish),
            _ => Err(Error::arg(format!("unknown activation `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Reduce {
    Max,
    Mean,
    Sum,
}

impl std::str::FromStr for Reduce {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "max" => Ok(Reduce::Max),
            "mean" => Ok(Reduce::Mean),
            "sum" => Ok(Reduce::Sum),
            _ => Err(Error::arg(format!("unknown reduction `{s}`"))),
        }
    }
}

/// Normalization mode for [`Graph::batch_norm`].
#[derive(Clone, Debug)]
pub enum BnMode<'a> {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with stored running statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

/// Per-channel mean and biased variance seen by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Shape bookkeeping for reductions: the tensor is viewed as
/// `(kept..., reduced...)` after permuting.
struct ReduceLayout {
    perm: Vec<usize>,
    inverse: Vec<usize>,
    permuted_shape: Vec<usize>,
    out_shape: Vec<usize>,
    inner: usize,
}

impl ReduceLayout {
    fn new(shape: &[usize], axes: &[usize]) -> Result<Self> {
        let nd = shape.len();
        let mut reduced = vec![false; nd];
        for &a in axes {
            if a >= nd || reduced[a] {
                return Err(Error::shape(format!("bad reduction axes {axes:?} for {shape:?}")));
            }
            reduced[a] = true;
        }
        let kept: Vec<usize> = (0..nd).filter(|&a| !reduced[a]).collect();
        let mut red: Vec<usize> = axes.to_vec();
        red.sort_unstable();
        let perm: Vec<usize> = kept.iter().chain(&red).copied().collect();
        let mut inverse = vec![0; nd];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        Ok(Self {
            permuted_shape: perm.iter().map(|&a| shape[a]).collect(),
            out_shape: kept.iter().map(|&a| shape[a]).collect(),
            inner: red.iter().map(|&a| shape[a]).product(),
            perm,
            inverse,
        })
    }

    fn identity_perm(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| i == p)
    }
}

impl Graph {
    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64 + 'static) -> Var {
        let xv = self.shared(x);
        let out = xv.map(f);
        self.push(
            out,
            vec![x],
            Box::new(move |g| vec![Some(g.zip_map(&xv, |g, x| g * df(x)).unwrap())]),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, vec![a, b], Box::new(|g| vec![Some(g.clone()), Some(g.clone())])))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let (av, bv) = (self.shared(a), self.shared(b));
        let out = av.zip_map(&bv, |x, y| x * y)?;
        Ok(self.push(
            out,
            vec![a, b],
            Box::new(move |g| {
                vec![
                    Some(g.zip_map(&bv, |g, y| g * y).unwrap()),
                    Some(g.zip_map(&av, |g, x| g * x).unwrap()),
                ]
            }),
        ))
    }

    /// Elementwise product with a fixed tensor of the same shape.
    pub fn mul_const(&mut self, x: Var, c: Rc<Tensor>) -> Result<Var> {
        same_shape(self.value(x), &c, "mul_const")?;
        let out = self.value(x).zip_map(&c, |x, y| x * y)?;
        Ok(self.push(
            out,
            vec![x],
            Box::new(move |g| vec![Some(g.zip_map(&c, |g, y| g * y).unwrap())]),
        ))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, vec![x], Box::new(move |g| vec![Some(g.map(|v| v * factor))]))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, vec![x], Box::new(move |g| vec![Some(Tensor::full(&shape, g.item()))]))
    }

    /// `Σ x·c` for a fixed `c`; handy for reducing tensors to test scalars.
    pub fn dot_const(&mut self, x: Var, c: Rc<Tensor>) -> Result<Var> {
        let p = self.mul_const(x, c)?;
        Ok(self.sum_all(p))
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(x, f64::sin, f64::cos)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), |v| if v > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(
            x,
            move |v| if v > 0.0 { v } else { slope * v },
            move |v| if v > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn swish(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| v * sigmoid(v),
            |v| {
                let s = sigmoid(v);
                s + v * s * (1.0 - s)
            },
        )
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        match act {
            Activation::Sine => self.sin(x),
            Activation::Relu => self.relu(x),
            Activation::LeakyRelu => self.leaky_relu(x, Activation::LEAKY_SLOPE),
            Activation::Swish => self.swish(x),
        }
    }

    /// `(m, k) · (k, n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.shared(a), self.shared(b));
        let (m, k, n) = match (av.shape(), bv.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            (sa, sb) => return Err(Error::shape(format!("matmul: {sa:?} · {sb:?}"))),
        };
        let mut out = vec![0.0; m * n];
        super::conv::gemm(m, k, n, av.data(), (k, 1), bv.data(), (n, 1), 0.0, &mut out, (n, 1));
        Ok(self.push(
            Tensor::new(&[m, n], out)?,
            vec![a, b],
            Box::new(move |g| {
                let mut ga = vec![0.0; m * k];
                super::conv::gemm(m, n, k, g.data(), (n, 1), bv.data(), (1, n), 0.0, &mut ga, (k, 1));
                let mut gb = vec![0.0; k * n];
                super::conv::gemm(k, m, n, av.data(), (1, k), g.data(), (n, 1), 0.0, &mut gb, (n, 1));
                vec![
                    Some(Tensor::new(&[m, k], ga).unwrap()),
                    Some(Tensor::new(&[k, n], gb).unwrap()),
                ]
            }),
        ))
    }

    /// `gain · x Wᵀ + b` for `x: (n, in)`, `W: (out, in)`, `b: (out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>, gain: f64) -> Result<Var> {
        let (xv, wv) = (self.shared(x), self.shared(w));
        let (n, fin, fout) = match (xv.shape(), wv.shape()) {
            (&[n, i], &[o, i2]) if i == i2 => (n, i, o),
            (sx, sw) => return Err(Error::shape(format!("linear: x {sx:?}, W {sw:?}"))),
        };
        let mut out = vec![0.0; n * fout];
        if let Some(b) = b {
            let bv = self.value(b);
            bv.expect_shape(&[fout])?;
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(bv.data());
            }
        }
        let mut xs = (*xv).clone();
        if gain != 1.0 {
            xs = xs.map(|v| v * gain);
        }
        super::conv::gemm(n, fin, fout, xs.data(), (fin, 1), wv.data(), (1, fin), 1.0, &mut out, (fout, 1));
        let mut parents = vec![x, w];
        parents.extend(b);
        let has_b = b.is_some();
        Ok(self.push(
            Tensor::new(&[n, fout], out)?,
            parents,
            Box::new(move |g| {
                let mut gx = vec![0.0; n * fin];
                super::conv::gemm(n, fout, fin, g.data(), (fout, 1), wv.data(), (fin, 1), 0.0, &mut gx, (fin, 1));
                let mut gw = vec![0.0; fout * fin];
                super::conv::gemm(fout, n, fin, g.data(), (1, fout), xs.data(), (fin, 1), 0.0, &mut gw, (fin, 1));
                if gain != 1.0 {
                    gx.iter_mut().for_each(|v| *v *= gain);
                }
                let mut grads = vec![
                    Some(Tensor::new(&[n, fin], gx).unwrap()),
                    Some(Tensor::new(&[fout, fin], gw).unwrap()),
                ];
                if has_b {
                    let mut gb = vec![0.0; fout];
                    for row in g.data().chunks(fout) {
                        for (a, b) in gb.iter_mut().zip(row) {
                            *a += b;
                        }
                    }
                    grads.push(Some(Tensor::new(&[fout], gb).unwrap()));
                }
                grads
            }),
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let old = self.shape(x).to_vec();
        let out = (*self.shared(x)).clone().reshape(shape)?;
        Ok(self.push(
            out,
            vec![x],
            Box::new(move |g| vec![Some(g.clone().reshape(&old).unwrap())]),
        ))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let out = self.value(x).permute(axes)?;
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Ok(self.push(
            out,
            vec![x],
            Box::new(move |g| vec![Some(g.permute(&inverse).unwrap())]),
        ))
    }

    /// Inserts a new axis of extent `n` at position `axis`, repeating values.
    pub fn broadcast_axis(&mut self, x: Var, axis: usize, n: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis > shape.len() {
            return Err(Error::shape(format!("axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis..].iter().product();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            for _ in 0..n {
                out.extend_from_slice(&src[o * inner..(o + 1) * inner]);
            }
        }
        let mut out_shape = shape.clone();
        out_shape.insert(axis, n);
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            vec![x],
            Box::new(move |g| {
                let mut gx = vec![0.0; outer * inner];
                for o in 0..outer {
                    let dst = &mut gx[o * inner..(o + 1) * inner];
                    for r in 0..n {
                        let off = (o * n + r) * inner;
                        for (d, s) in dst.iter_mut().zip(&g.data()[off..off + inner]) {
                            *d += s;
                        }
                    }
                }
                vec![Some(Tensor::new(&shape, gx).unwrap())]
            }),
        ))
    }

    /// Stride-1 "same" cross-correlation of `x: (B, C_in, H, W)` with
    /// `w: (C_out, C_in / groups, k, k)`.
    pub fn conv2d(&mut self, x: Var, w: Var, groups: usize, padding: Padding) -> Result<Var> {
        let (xv, wv) = (self.shared(x), self.shared(w));
        let geo = match (xv.shape(), wv.shape()) {
            (&[b, cin, h, wd], &[cout, cin_g, k, k2])
                if k == k2
                    && k % 2 == 1
                    && groups > 0
                    && cin % groups == 0
                    && cout % groups == 0
                    && cin / groups == cin_g =>
            {
                ConvGeometry {
                    batch: b,
                    groups,
                    cin_g,
                    cout_g: cout / groups,
                    height: h,
                    width: wd,
                    k,
                    padding,
                }
            }
            (sx, sw) => {
                return Err(Error::shape(format!(
                    "conv2d: input {sx:?}, weight {sw:?}, groups {groups}"
                )))
            }
        };
        let out = conv2d_forward(xv.data(), wv.data(), &geo);
        let out_shape = [geo.batch, geo.groups * geo.cout_g, geo.height, geo.width];
        let need_x = self.requires_grad(x);
        let need_w = self.requires_grad(w);
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            vec![x, w],
            Box::new(move |g| {
                let (gx, gw) = conv2d_backward(xv.data(), wv.data(), g.data(), &geo, need_x, need_w);
                vec![
                    gx.map(|d| Tensor::new(xv.shape(), d).unwrap()),
                    gw.map(|d| Tensor::new(wv.shape(), d).unwrap()),
                ]
            }),
        ))
    }

    /// Non-overlapping `size × size` max pooling over the last two axes of a
    /// 4-D tensor; trailing rows/columns that do not fill a window are dropped.
    pub fn max_pool2d(&mut self, x: Var, size: usize) -> Result<Var> {
        let xv = self.shared(x);
        let &[b, c, h, w] = xv.shape() else {
            return Err(Error::shape(format!("max_pool2d needs 4-D input, got {:?}", xv.shape())));
        };
        if size == 0 || h < size || w < size {
            return Err(Error::arg(format!("pool size {size} on {h}×{w}")));
        }
        let (oh, ow) = (h / size, w / size);
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut arg = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = 0;
                    for dy in 0..size {
                        for dx in 0..size {
                            let i = base + (oy * size + dy) * w + ox * size + dx;
                            if xv.data()[i] > best {
                                best = xv.data()[i];
                                at = i;
                            }
                        }
                    }
                    out.push(best);
                    arg.push(at);
                }
            }
        }
        let in_shape = xv.shape().to_vec();
        Ok(self.push(
            Tensor::new(&[b, c, oh, ow], out)?,
            vec![x],
            Box::new(move |g| {
                let mut gx = Tensor::zeros(&in_shape);
                let d = gx.data_mut();
                for (&i, gv) in arg.iter().zip(g.data()) {
                    d[i] += gv;
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Reduces over `axes`, dropping them from the shape.
    pub fn reduce(&mut self, x: Var, axes: &[usize], mode: Reduce) -> Result<Var> {
        let xv = self.shared(x);
        let layout = ReduceLayout::new(xv.shape(), axes)?;
        let permuted = if layout.identity_perm() {
            (*xv).clone()
        } else {
            xv.permute(&layout.perm)?
        };
        let inner = layout.inner;
        let outer = permuted.numel() / inner.max(1);
        if inner == 0 {
            return Err(Error::shape("reduction over an empty axis"));
        }
        let mut out = Vec::with_capacity(outer);
        let mut arg = Vec::new();
        for row in permuted.data().chunks(inner) {
            match mode {
                Reduce::Sum => out.push(row.iter().sum()),
                Reduce::Mean => out.push(row.iter().sum::<f64>() / inner as f64),
                Reduce::Max => {
                    let (i, v) = row
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
                    out.push(v);
                    arg.push(i);
                }
            }
        }
        let out_t = Tensor::new(&layout.out_shape, out)?;
        Ok(self.push(
            out_t,
            vec![x],
            Box::new(move |g| {
                let mut gp = vec![0.0; outer * inner];
                for (o, &gv) in g.data().iter().enumerate() {
                    let row = &mut gp[o * inner..(o + 1) * inner];
                    match mode {
                        Reduce::Sum => row.fill(gv),
                        Reduce::Mean => row.fill(gv / inner as f64),
                        Reduce::Max => row[arg[o]] = gv,
                    }
                }
                let gp = Tensor::new(&layout.permuted_shape, gp).unwrap();
                let gx = if layout.identity_perm() {
                    gp
                } else {
                    gp.permute(&layout.inverse).unwrap()
                };
                vec![Some(gx)]
            }),
        ))
    }

    /// Per-channel normalization of `x: (B, C, ...)` over every axis except
    /// axis 1, followed by the affine map `γ x̂ + β`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        mode: BnMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xv = self.shared(x);
        let shape = xv.shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::shape(format!("batch_norm needs (B, C, ...), got {shape:?}")));
        }
        let (b, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let count = b * inner;
        self.value(gamma).expect_shape(&[c])?;
        self.value(beta).expect_shape(&[c])?;
        let gv = self.shared(gamma);
        let bv = self.value(beta).data().to_vec();
        let channel = move |ch: usize| {
            (0..b).flat_map(move |n| {
                let base = (n * c + ch) * inner;
                base..base + inner
            })
        };
        let (mean, var, stats) = match mode {
            BnMode::Train => {
                if count < 2 {
                    return Err(Error::arg("batch_norm training needs more than one value per channel"));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let m = channel(ch).map(|i| xv.data()[i]).sum::<f64>() / count as f64;
                    let v: f64 = channel(ch).map(|i| (xv.data()[i] - m).powi(2)).sum();
                    mean[ch] = m;
                    var[ch] = v / count as f64;
                }
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                    count,
                };
                (mean, var, Some(stats))
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape("batch_norm running statistics do not match channels"));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let train = stats.is_some();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; xv.numel()];
        let mut out = vec![0.0; xv.numel()];
        for ch in 0..c {
            for i in channel(ch) {
                xhat[i] = (xv.data()[i] - mean[ch]) * inv_std[ch];
                out[i] = gv.data()[ch] * xhat[i] + bv[ch];
            }
        }
        let y = self.push(
            Tensor::new(&shape, out)?,
            vec![x, gamma, beta],
            Box::new(move |g| {
                let gd = g.data();
                let mut gx = vec![0.0; gd.len()];
                let mut ggamma = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for ch in 0..c {
                    let (mut sg, mut sgx) = (0.0, 0.0);
                    for i in channel(ch) {
                        sg += gd[i];
                        sgx += gd[i] * xhat[i];
                    }
                    ggamma[ch] = sgx;
                    gbeta[ch] = sg;
                    let gam = gv.data()[ch];
                    if train {
                        let n = count as f64;
                        let k = gam * inv_std[ch] / n;
                        for i in channel(ch) {
                            gx[i] = k * (n * gd[i] - sg - xhat[i] * sgx);
                        }
                    } else {
                        let k = gam * inv_std[ch];
                        for i in channel(ch) {
                            gx[i] = k * gd[i];
                        }
                    }
                }
                vec![
                    Some(Tensor::new(&shape, gx).unwrap()),
                    Some(Tensor::new(&[c], ggamma).unwrap()),
                    Some(Tensor::new(&[c], gbeta).unwrap()),
                ]
            }),
        );
        Ok((y, stats))
    }

    /// Mean softmax cross-entropy of `logits: (B, K)` against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.shared(logits);
        let &[b, k] = lv.shape() else {
            return Err(Error::shape(format!("logits must be 2-D, got {:?}", lv.shape())));
        };
        if labels.len() != b || b == 0 {
            return Err(Error::shape(format!("{} labels for {b} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::arg(format!("label {bad} out of range for {k} classes")));
        }
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for (n, row) in lv.data().chunks(k).enumerate() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            for (p, v) in probs[n * k..(n + 1) * k].iter_mut().zip(row) {
                *p = (v - m).exp() / z;
            }
            loss += z.ln() + m - row[labels[n]];
        }
        let labels = labels.to_vec();
        Ok(self.push(
            Tensor::scalar(loss / b as f64),
            vec![logits],
            Box::new(move |g| {
                let s = g.item() / b as f64;
                let mut gl = probs.clone();
                for (n, &l) in labels.iter().enumerate() {
                    gl[n * k + l] -= 1.0;
                }
                gl.iter_mut().for_each(|v| *v *= s);
                vec![Some(Tensor::new(&[b, k], gl).unwrap())]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand(shape: &[usize], seed: u64) -> Tensor {
        Tensor::uniform(shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Projects `y` onto a fixed random tensor so every output entry matters.
    fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
        let c = Rc::new(rand(g.shape(y), seed));
        g.dot_const(y, c)
    }

    #[test]
    fn sin_gradient_at_zero_is_one() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(&[1], vec![0.0]).unwrap());
        let y = g.sin(x);
        let s = g.sum_all(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn matmul_matches_finite_differences() {
        let b = rand(&[3, 2], 2);
        let err = grad_check(
            |g, x| {
                let bv = g.constant(b.clone());
                let y = g.matmul(x, bv)?;
                project(g, y, 3)
            },
            &rand(&[4, 3], 1),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn elementwise_ops_pass_grad_check() {
        let x = rand(&[3, 5], 4);
        type Op = fn(&mut Graph, Var) -> Var;
        let ops: [(&str, Op); 5] = [
            ("sin", |g, x| g.sin(x)),
            ("relu", |g, x| g.relu(x)),
            ("leaky", |g, x| g.leaky_relu(x, 0.1)),
            ("swish", |g, x| g.swish(x)),
            ("scale", |g, x| g.scale(x, -2.5)),
        ];
        for (name, op) in ops {
            let err = grad_check(
                |g, x| {
                    let y = op(g, x);
                    project(g, y, 5)
                },
                &x,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-4, "{name}: {err}");
        }
    }

    #[test]
    fn binary_and_layout_ops_pass_grad_check() {
        let x = rand(&[2, 3, 4], 6);
        let other = rand(&[2, 3, 4], 7);
        let checks: Vec<(&str, Box<dyn Fn(&mut Graph, Var) -> Result<Var>>)> = vec![
            ("add", Box::new(|g: &mut Graph, x| {
                let o = g.leaf(other.clone());
                let y = g.add(x, o)?;
                project(g, y, 8)
            })),
            ("mul", Box::new(|g: &mut Graph, x| {
                let y = g.mul(x, x)?;
                project(g, y, 8)
            })),
            ("permute", Box::new(|g: &mut Graph, x| {
                let y = g.permute(x, &[2, 0, 1])?;
                project(g, y, 8)
            })),
            ("reshape", Box::new(|g: &mut Graph, x| {
                let y = g.reshape(x, &[6, 4])?;
                project(g, y, 8)
            })),
            ("broadcast", Box::new(|g: &mut Graph, x| {
                let y = g.broadcast_axis(x, 1, 3)?;
                project(g, y, 8)
            })),
            ("reduce_max", Box::new(|g: &mut Graph, x| {
                let y = g.reduce(x, &[0, 2], Reduce::Max)?;
                project(g, y, 8)
            })),
            ("reduce_mean", Box::new(|g: &mut Graph, x| {
                let y = g.reduce(x, &[1], Reduce::Mean)?;
                project(g, y, 8)
            })),
            ("reduce_sum", Box::new(|g: &mut Graph, x| {
                let y = g.reduce(x, &[0, 1, 2], Reduce::Sum)?;
                project(g, y, 8)
            })),
        ];
        for (name, f) in checks {
            let err = grad_check(&*f, &x, 1e-6).unwrap();
            assert!(err < 1e-4, "{name}: {err}");
        }
    }

    #[test]
    fn linear_passes_grad_check_in_all_arguments() {
        let inputs = [rand(&[5, 3], 1), rand(&[4, 3], 2), rand(&[4], 3)];
        let err = crate::tensor::grad_check_many(
            |g, v| {
                let y = g.linear(v[0], v[1], Some(v[2]), 7.0)?;
                let y = g.sin(y);
                project(g, y, 4)
            },
            &inputs,
            1e-6,
            None,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn conv2d_passes_grad_check() {
        for (groups, cin, cout, k, pad) in [
            (1, 2, 3, 3, Padding::Zero),
            (2, 4, 2, 3, Padding::Circular),
            (3, 3, 3, 5, Padding::Zero),
            (3, 3, 3, 3, Padding::Circular),
            (2, 4, 6, 1, Padding::Zero),
        ] {
            let inputs = [rand(&[2, cin, 5, 6], 1), rand(&[cout, cin / groups, k, k], 2)];
            let err = crate::tensor::grad_check_many(
                |g, v| {
                    let y = g.conv2d(v[0], v[1], groups, pad)?;
                    project(g, y, 3)
                },
                &inputs,
                1e-6,
                None,
            )
            .unwrap();
            assert!(err < 1e-4, "groups {groups} k {k} {pad:?}: {err}");
        }
    }

    #[test]
    fn conv2d_of_zero_image_is_zero_with_zero_kernel_gradient() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 6, 6]));
        let w = g.leaf(rand(&[3, 2, 3, 3], 1));
        let y = g.conv2d(x, w, 1, Padding::Zero).unwrap();
        assert_eq!(g.value(y).max_abs(), 0.0);
        let s = g.sum_all(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(w).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn circular_conv_commutes_with_cyclic_shift() {
        let (h, w) = (6, 7);
        let x = rand(&[1, 2, h, w], 1);
        let shifted = Tensor::from_fn(&[1, 2, h, w], |i| {
            let (c, y, xx) = (i / (h * w), (i / w) % h, i % w);
            x.data()[c * h * w + ((y + h - 2) % h) * w + (xx + w - 3) % w]
        });
        let kernel = rand(&[3, 2, 3, 3], 2);
        let run = |t: &Tensor| {
            let mut g = Graph::new();
            let xv = g.constant(t.clone());
            let kv = g.constant(kernel.clone());
            let y = g.conv2d(xv, kv, 1, Padding::Circular).unwrap();
            g.value(y).clone()
        };
        let a = run(&shifted);
        let b = run(&x);
        let b_shift = Tensor::from_fn(&[1, 3, h, w], |i| {
            let (c, y, xx) = (i / (h * w), (i / w) % h, i % w);
            b.data()[c * h * w + ((y + h - 2) % h) * w + (xx + w - 3) % w]
        });
        assert!(a.max_abs_diff(&b_shift) < 1e-12);
    }

    #[test]
    fn max_pool_passes_grad_check() {
        let err = grad_check(
            |g, x| {
                let y = g.max_pool2d(x, 2)?;
                project(g, y, 2)
            },
            &rand(&[2, 2, 5, 4], 1),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn batch_norm_passes_grad_check_in_both_modes() {
        let inputs = [rand(&[3, 2, 2, 3], 1), rand(&[2], 2), rand(&[2], 3)];
        let train = crate::tensor::grad_check_many(
            |g, v| {
                let (y, _) = g.batch_norm(v[0], v[1], v[2], 1e-5, BnMode::Train)?;
                project(g, y, 4)
            },
            &inputs,
            1e-6,
            None,
        )
        .unwrap();
        assert!(train < 1e-4, "{train}");
        let (mean, var) = ([0.2, -0.1], [1.5, 0.7]);
        let eval = crate::tensor::grad_check_many(
            |g, v| {
                let (y, _) = g.batch_norm(v[0], v[1], v[2], 1e-5, BnMode::Eval { mean: &mean, var: &var })?;
                project(g, y, 4)
            },
            &inputs,
            1e-6,
            None,
        )
        .unwrap();
        assert!(eval < 1e-4, "{eval}");
    }

    #[test]
    fn batch_norm_eval_is_affine() {
        let (mean, var) = ([0.5], [4.0]);
        let run = |v: f64| {
            let mut g = Graph::new();
            let x = g.constant(Tensor::new(&[1, 1, 1], vec![v]).unwrap());
            let ga = g.constant(Tensor::new(&[1], vec![3.0]).unwrap());
            let be = g.constant(Tensor::new(&[1], vec![1.0]).unwrap());
            let (y, stats) = g.batch_norm(x, ga, be, 0.0, BnMode::Eval { mean: &mean, var: &var }).unwrap();
            assert!(stats.is_none());
            g.value(y).item()
        };
        assert_eq!(run(0.5), 1.0);
        assert_eq!(run(2.5), 4.0);
        assert_eq!(run(4.5) - run(2.5), run(2.5) - run(0.5));
    }

    #[test]
    fn cross_entropy_passes_grad_check() {
        let labels = [2, 0, 1, 2];
        let err = grad_check(|g, x| g.softmax_cross_entropy(x, &labels), &rand(&[4, 3], 1), 1e-6).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_k() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 10]));
        let l = g.softmax_cross_entropy(x, &[3, 7]).unwrap();
        assert!((g.value(l).item() - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn identity_grad_check_is_exact() {
        // dyadic inputs and step keep the central difference free of rounding
        let x = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let err = grad_check(|g, x| Ok(g.sum_all(x)), &x, 0.125).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3, 2]));
        assert!(g.add(a, b).is_err());
        assert!(g.matmul(a, a).is_err());
    }
}
