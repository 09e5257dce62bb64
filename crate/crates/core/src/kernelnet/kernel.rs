use std::rc::Rc;

use rand::Rng;

use super::factor::{Factorization, Factors};
use super::siren::{Siren, SirenConfig};
use crate::error::{Error, Result};
use crate::lie::{GroupElement, GroupTag, SubgroupGrid};
use crate::tensor::{Bound, Graph, ParamId, ParamStore, Tensor, Var};

/// Whether a kernel lifts images onto the group or acts between group maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelRole {
    Lift,
    Group(Factorization),
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec {
    /// Transformation subgroup: SO2, Rplus or Sim2.
    pub subgroup: GroupTag,
    pub role: KernelRole,
    pub c_in: usize,
    pub c_out: usize,
    /// Odd stencil width.
    pub k: usize,
    pub siren: SirenConfig,
    /// Number of scale neighbours `h̃` at or above `h` that the kernel reaches;
    /// 0 leaves the scale axis unclipped.
    pub scale_support: usize,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.subgroup, GroupTag::SO2 | GroupTag::Rplus | GroupTag::Sim2) {
            return Err(Error::arg(format!(
                "kernels live on R²⋊H with H in SO2/Rplus/Sim2, got {}",
                self.subgroup
            )));
        }
        if self.k.is_multiple_of(2) {
            return Err(Error::arg(format!("stencil size must be odd, got {}", self.k)));
        }
        if self.c_in == 0 || self.c_out == 0 {
            return Err(Error::arg("channel counts must be positive"));
        }
        if self.role == KernelRole::Group(Factorization::HSeparable) && self.subgroup != GroupTag::Sim2 {
            return Err(Error::arg("the H-separable factorization needs Sim(2)"));
        }
        Ok(())
    }
}

/// Row-major `k × k` stencil offsets: index `ky·k + kx` is the point
/// `(kx − r, ky − r)`, `r = (k − 1)/2`.
pub fn stencil_points(k: usize) -> Result<Vec<[f64; 2]>> {
    if k.is_multiple_of(2) {
        return Err(Error::arg(format!("stencil size must be odd, got {k}")));
    }
    let r = (k / 2) as f64;
    Ok((0..k * k)
        .map(|i| [(i % k) as f64 - r, (i / k) as f64 - r])
        .collect())
}

/// Network inputs for the spatial factor under transform `h`: `h⁻¹u` for
/// every stencil point, divided by the stencil half-width.
pub fn spatial_coords(k: usize, h: &GroupElement) -> Result<Vec<[f64; 2]>> {
    let radius = ((k / 2) as f64).max(1.0);
    let inv = h.inverse();
    Ok(stencil_points(k)?
        .into_iter()
        .map(|u| {
            let p = inv.act_on_point(u);
            [p[0] / radius, p[1] / radius]
        })
        .collect())
}

/// Subgroup log-coordinates of `h⁻¹h̃` for every `(h, h̃)`, row-major.
pub fn relative_coords(out_grid: &SubgroupGrid, in_grid: &SubgroupGrid) -> Result<Tensor> {
    let dim = out_grid.tag().subgroup_dim();
    let mut data = Vec::with_capacity(out_grid.len() * in_grid.len() * dim);
    for h in out_grid.elements() {
        for ht in in_grid.elements() {
            let (c, n) = h.relative(ht)?.subgroup_log();
            data.extend_from_slice(&c[..n]);
        }
    }
    Tensor::new(&[out_grid.len() * in_grid.len(), dim], data)
}

/// 1 where `h̃` lies within `support` scale steps at or above `h`, else 0.
/// Grids without a scale factor are unmasked.
pub fn support_mask(out_grid: &SubgroupGrid, in_grid: &SubgroupGrid, support: usize) -> Vec<f64> {
    let scaled = out_grid.tag().has_scale() && support > 0;
    let mut mask = Vec::with_capacity(out_grid.len() * in_grid.len());
    for i in 0..out_grid.len() {
        for it in 0..in_grid.len() {
            let d = in_grid.scale_index(it) as isize - out_grid.scale_index(i) as isize;
            let keep = !scaled || (0..support as isize).contains(&d);
            mask.push(if keep { 1.0 } else { 0.0 });
        }
    }
    mask
}

/// Continuous kernel of one convolution layer: one network per factor plus
/// the channel-mixing matrix where the factorization has one.
#[derive(Clone, Debug)]
pub struct KernelNet {
    spec: KernelSpec,
    nets: Vec<Siren>,
    channel: Option<ParamId>,
}

/// A kernel evaluated on concrete grids, as graph nodes.
#[derive(Clone, Debug)]
pub struct SampledKernel {
    pub factors: Factors<Var>,
    pub out_grid: SubgroupGrid,
    pub in_grid: Option<SubgroupGrid>,
    pub k: usize,
}

impl SampledKernel {
    pub fn values(&self, g: &Graph) -> Factors<Tensor> {
        self.factors.map(|&v| g.value(v).clone())
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

fn coords_tensor(points: &[[f64; 2]]) -> Tensor {
    Tensor::new(&[points.len(), 2], points.iter().flatten().copied().collect()).unwrap()
}

impl KernelNet {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, spec: KernelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let (i, j) = (spec.c_in, spec.c_out);
        let dh = spec.subgroup.subgroup_dim();
        let hidden = spec.siren.hidden.clone();
        let mut make = |suffix: &str, input: usize, output: usize, rng: &mut R| {
            let omega0 = match suffix {
                "subgroup" | "scale" | "rotation" => spec.siren.subgroup_omega0.unwrap_or(spec.siren.omega0),
                _ => spec.siren.omega0,
            };
            Siren::init(
                store,
                &format!("{name}.{suffix}"),
                &widths(input, &hidden, output),
                omega0,
                spec.siren.activation,
                rng,
            )
        };
        let mut nets = Vec::new();
        match spec.role {
            KernelRole::Lift => nets.push(make("spatial", 2, j * i, rng)?),
            KernelRole::Group(f) => match f {
                Factorization::Nonseparable => nets.push(make("joint", 2 + dh, j * i, rng)?),
                Factorization::Dseparable => nets.push(make("joint", 2 + dh, j, rng)?),
                Factorization::Separable => {
                    nets.push(make("subgroup", dh, j * i, rng)?);
                    nets.push(make("spatial", 2, j, rng)?);
                }
                Factorization::Gseparable => {
                    nets.push(make("subgroup", dh, j * i, rng)?);
                    nets.push(make("spatial", 2, j * i, rng)?);
                }
                Factorization::DGseparable => {
                    nets.push(make("subgroup", dh, j, rng)?);
                    nets.push(make("spatial", 2, j, rng)?);
                }
                Factorization::HSeparable => {
                    nets.push(make("scale", 1, j * i, rng)?);
                    nets.push(make("rotation", 1, j, rng)?);
                    nets.push(make("spatial", 2, j, rng)?);
                }
            },
        }
        let channel = match spec.role {
            KernelRole::Group(f) if f.has_channel_factor() => {
                let b = 1.0 / (i as f64).sqrt();
                Some(store.add(&format!("{name}.channel"), Tensor::uniform(&[j, i], -b, b, rng))?)
            }
            _ => None,
        };
        Ok(Self { spec, nets, channel })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn nets(&self) -> &[Siren] {
        &self.nets
    }

    pub fn channel(&self) -> Option<ParamId> {
        self.channel
    }

    /// The network evaluated at stencil coordinates, if the kernel has one.
    pub fn spatial_net(&self) -> Option<&Siren> {
        match self.spec.role {
            KernelRole::Lift => self.nets.first(),
            KernelRole::Group(f) => match f {
                Factorization::Nonseparable | Factorization::Dseparable => None,
                _ => self.nets.last(),
            },
        }
    }

    /// Values of the spatial network at the stencil transformed by `h`,
    /// shaped `(U, out)`.
    pub fn sample_spatial_at(&self, g: &mut Graph, p: &Bound, h: &GroupElement) -> Result<Var> {
        let net = self
            .spatial_net()
            .ok_or_else(|| Error::arg("this factorization has no separate spatial factor"))?;
        let c = g.constant(coords_tensor(&spatial_coords(self.spec.k, h)?));
        net.forward(g, p, c)
    }

    fn check_grid(&self, grid: &SubgroupGrid) -> Result<()> {
        if grid.tag() != self.spec.subgroup {
            return Err(Error::arg(format!(
                "kernel over {} sampled on a {} grid",
                self.spec.subgroup,
                grid.tag()
            )));
        }
        if grid.is_empty() {
            return Err(Error::arg("empty grid"));
        }
        Ok(())
    }

    /// Spatial factor at every `h` of `grid`: `(H·U, out)`.
    fn spatial_rows(&self, g: &mut Graph, p: &Bound, net: &Siren, grid: &SubgroupGrid) -> Result<Var> {
        let mut pts = Vec::with_capacity(grid.len() * self.spec.k * self.spec.k);
        for h in grid.elements() {
            pts.extend(spatial_coords(self.spec.k, h)?);
        }
        let c = g.constant(coords_tensor(&pts));
        net.forward(g, p, c)
    }

    /// Evaluates every factor on `out_grid` (and `in_grid` for group kernels).
    pub fn sample(
        &self,
        g: &mut Graph,
        p: &Bound,
        out_grid: &SubgroupGrid,
        in_grid: Option<&SubgroupGrid>,
    ) -> Result<SampledKernel> {
        self.check_grid(out_grid)?;
        let (i, j, k) = (self.spec.c_in, self.spec.c_out, self.spec.k);
        let u = k * k;
        let nh = out_grid.len();
        let factors = match self.spec.role {
            KernelRole::Lift => {
                let v = self.spatial_rows(g, p, &self.nets[0], out_grid)?;
                Factors::Lift {
                    spatial: g.reshape(v, &[nh, u, j, i])?,
                }
            }
            KernelRole::Group(f) => {
                let in_grid = in_grid.ok_or_else(|| Error::arg("group kernels need an input grid"))?;
                self.check_grid(in_grid)?;
                self.sample_group(g, p, f, out_grid, in_grid)?
            }
        };
        Ok(SampledKernel {
            factors,
            out_grid: out_grid.clone(),
            in_grid: in_grid.cloned(),
            k,
        })
    }

    fn sample_group(
        &self,
        g: &mut Graph,
        p: &Bound,
        f: Factorization,
        out_grid: &SubgroupGrid,
        in_grid: &SubgroupGrid,
    ) -> Result<Factors<Var>> {
        let (i, j, k) = (self.spec.c_in, self.spec.c_out, self.spec.k);
        let u = k * k;
        let (nh, nt) = (out_grid.len(), in_grid.len());
        let mask = support_mask(out_grid, in_grid, self.spec.scale_support);
        // broadcasts the (H, H̃) mask over trailing axes of extent `tail`
        let masked = |g: &mut Graph, v: Var, tail: usize| -> Result<Var> {
            if mask.iter().all(|&m| m == 1.0) {
                return Ok(v);
            }
            let full: Vec<f64> = mask.iter().flat_map(|&m| std::iter::repeat_n(m, tail)).collect();
            let shape = g.shape(v).to_vec();
            g.mul_const(v, Rc::new(Tensor::new(&shape, full)?))
        };
        let subgroup_values = |g: &mut Graph, net: &Siren| -> Result<Var> {
            let c = g.constant(relative_coords(out_grid, in_grid)?);
            net.forward(g, p, c)
        };
        let joint_values = |g: &mut Graph, net: &Siren| -> Result<Var> {
            let rel = relative_coords(out_grid, in_grid)?;
            let dh = rel.shape()[1];
            let mut data = Vec::with_capacity(nh * nt * u * (2 + dh));
            for (hi, h) in out_grid.elements().iter().enumerate() {
                let xs = spatial_coords(k, h)?;
                for ti in 0..nt {
                    let r = &rel.data()[(hi * nt + ti) * dh..(hi * nt + ti + 1) * dh];
                    for x in &xs {
                        data.extend_from_slice(x);
                        data.extend_from_slice(r);
                    }
                }
            }
            let c = g.constant(Tensor::new(&[nh * nt * u, 2 + dh], data)?);
            net.forward(g, p, c)
        };
        let channel = self.channel.map(|id| p.var(id));
        Ok(match f {
            Factorization::Nonseparable => {
                let v = joint_values(g, &self.nets[0])?;
                let v = g.reshape(v, &[nh, nt, u, j, i])?;
                Factors::Nonseparable {
                    full: masked(g, v, u * j * i)?,
                }
            }
            Factorization::Dseparable => {
                let v = joint_values(g, &self.nets[0])?;
                let v = g.reshape(v, &[nh, nt, u, j])?;
                Factors::Dseparable {
                    channel: channel.ok_or_else(|| Error::arg("missing channel factor"))?,
                    joint: masked(g, v, u * j)?,
                }
            }
            Factorization::Separable | Factorization::Gseparable => {
                let s = subgroup_values(g, &self.nets[0])?;
                let s = g.reshape(s, &[nh, nt, j, i])?;
                let subgroup = masked(g, s, j * i)?;
                let x = self.spatial_rows(g, p, &self.nets[1], out_grid)?;
                if f == Factorization::Separable {
                    Factors::Separable {
                        subgroup,
                        spatial: g.reshape(x, &[nh, u, j])?,
                    }
                } else {
                    Factors::Gseparable {
                        subgroup,
                        spatial: g.reshape(x, &[nh, u, j, i])?,
                    }
                }
            }
            Factorization::DGseparable => {
                let s = subgroup_values(g, &self.nets[0])?;
                let s = g.reshape(s, &[nh, nt, j])?;
                let subgroup = masked(g, s, j)?;
                let x = self.spatial_rows(g, p, &self.nets[1], out_grid)?;
                Factors::DGseparable {
                    channel: channel.ok_or_else(|| Error::arg("missing channel factor"))?,
                    subgroup,
                    spatial: g.reshape(x, &[nh, u, j])?,
                }
            }
            Factorization::HSeparable => self.sample_hseparable(g, p, out_grid, in_grid)?,
        })
    }

    fn sample_hseparable(
        &self,
        g: &mut Graph,
        p: &Bound,
        out_grid: &SubgroupGrid,
        in_grid: &SubgroupGrid,
    ) -> Result<Factors<Var>> {
        let (i, j, k) = (self.spec.c_in, self.spec.c_out, self.spec.k);
        let (ns, nr) = (out_grid.n_scale(), out_grid.n_rot());
        let (nst, nrt) = (in_grid.n_scale(), in_grid.n_rot());
        let el = out_grid.elements();
        let elt = in_grid.elements();

        let mut scale_in = Vec::with_capacity(ns * nst);
        let mut mask = Vec::with_capacity(ns * nst);
        for s in 0..ns {
            for st in 0..nst {
                scale_in.push((elt[st * nrt].s() / el[s * nr].s()).ln());
                let d = st as isize - s as isize;
                let keep = self.spec.scale_support == 0 || (0..self.spec.scale_support as isize).contains(&d);
                mask.push(if keep { 1.0 } else { 0.0 });
            }
        }
        let c = g.constant(Tensor::new(&[ns * nst, 1], scale_in)?);
        let sv = self.nets[0].forward(g, p, c)?;
        let mut scale = g.reshape(sv, &[ns, nst, j, i])?;
        if mask.contains(&0.0) {
            let full: Vec<f64> = mask.iter().flat_map(|&m| std::iter::repeat_n(m, j * i)).collect();
            scale = g.mul_const(scale, Rc::new(Tensor::new(&[ns, nst, j, i], full)?))?;
        }

        let mut rot_in = Vec::with_capacity(nr * nrt);
        for r in 0..nr {
            for rt in 0..nrt {
                rot_in.push(crate::lie::wrap_angle(elt[rt].theta() - el[r].theta()));
            }
        }
        let c = g.constant(Tensor::new(&[nr * nrt, 1], rot_in)?);
        let rv = self.nets[1].forward(g, p, c)?;
        let rotation = g.reshape(rv, &[nr, nrt, j])?;

        let x = self.spatial_rows(g, p, &self.nets[2], out_grid)?;
        Ok(Factors::HSeparable {
            scale,
            rotation,
            spatial: g.reshape(x, &[out_grid.len(), k * k, j])?,
        })
    }
}

fn dims<const N: usize>(t: &Tensor, what: &str) -> Result<[usize; N]> {
    t.shape()
        .try_into()
        .map_err(|_| Error::shape(format!("{what} factor must be {N}-D, got {:?}", t.shape())))
}

/// Dense kernel implied by the factors, `(H, H̃, U, J, I)` for group kernels
/// and `(H, U, J, I)` for lifting kernels. No determinant weighting applied.
pub fn materialize_full_kernel(factors: &Factors<Tensor>) -> Result<Tensor> {
    match factors {
        Factors::Lift { spatial } => Ok(spatial.clone()),
        Factors::Nonseparable { full } => Ok(full.clone()),
        Factors::Dseparable { channel, joint } => {
            let [j, i] = dims(channel, "channel")?;
            let [h, ht, u, j2] = dims(joint, "joint")?;
            check(j == j2)?;
            Ok(Tensor::from_fn(&[h, ht, u, j, i], |n| {
                let (ci, cj, rest) = (n % i, (n / i) % j, n / (i * j));
                joint.data()[rest * j + cj] * channel.data()[cj * i + ci]
            }))
        }
        Factors::Separable { subgroup, spatial } => {
            let [h, ht, j, i] = dims(subgroup, "subgroup")?;
            let [h2, u, j2] = dims(spatial, "spatial")?;
            check(h == h2 && j == j2)?;
            Ok(Tensor::from_fn(&[h, ht, u, j, i], |n| {
                let [a, b, c, d, e] = unravel(n, [h, ht, u, j, i]);
                subgroup.data()[((a * ht + b) * j + d) * i + e] * spatial.data()[(a * u + c) * j + d]
            }))
        }
        Factors::Gseparable { subgroup, spatial } => {
            let [h, ht, j, i] = dims(subgroup, "subgroup")?;
            let [h2, u, j2, i2] = dims(spatial, "spatial")?;
            check(h == h2 && j == j2 && i == i2)?;
            Ok(Tensor::from_fn(&[h, ht, u, j, i], |n| {
                let [a, b, c, d, e] = unravel(n, [h, ht, u, j, i]);
                subgroup.data()[((a * ht + b) * j + d) * i + e] * spatial.data()[((a * u + c) * j + d) * i + e]
            }))
        }
        Factors::DGseparable {
            channel,
            subgroup,
            spatial,
        } => {
            let [j, i] = dims(channel, "channel")?;
            let [h, ht, j2] = dims(subgroup, "subgroup")?;
            let [h2, u, j3] = dims(spatial, "spatial")?;
            check(j == j2 && j == j3 && h == h2)?;
            Ok(Tensor::from_fn(&[h, ht, u, j, i], |n| {
                let [a, b, c, d, e] = unravel(n, [h, ht, u, j, i]);
                channel.data()[d * i + e] * subgroup.data()[(a * ht + b) * j + d] * spatial.data()[(a * u + c) * j + d]
            }))
        }
        Factors::HSeparable {
            scale,
            rotation,
            spatial,
        } => {
            let [s, st, j, i] = dims(scale, "scale")?;
            let [r, rt, j2] = dims(rotation, "rotation")?;
            let [h, u, j3] = dims(spatial, "spatial")?;
            check(j == j2 && j == j3 && h == s * r)?;
            let ht = st * rt;
            Ok(Tensor::from_fn(&[h, ht, u, j, i], |n| {
                let [a, b, c, d, e] = unravel(n, [h, ht, u, j, i]);
                let (sa, ra) = (a / r, a % r);
                let (sb, rb) = (b / rt, b % rt);
                scale.data()[((sa * st + sb) * j + d) * i + e]
                    * rotation.data()[(ra * rt + rb) * j + d]
                    * spatial.data()[(a * u + c) * j + d]
            }))
        }
    }
}

fn check(ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::shape("kernel factors have inconsistent extents"))
    }
}

fn unravel<const N: usize>(mut n: usize, shape: [usize; N]) -> [usize; N] {
    let mut out = [0; N];
    for d in (0..N).rev() {
        out[d] = n % shape[d];
        n /= shape[d];
    }
    out
}
