use std::f64::consts::TAU;

use rand::Rng;

use super::group::{AlgebraVector, GroupElement, GroupTag};
use crate::error::{Error, Result};

/// How a grid came about; echoed into provenance and checkpoints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridMeta {
    pub n_scale: usize,
    pub n_rot: usize,
    pub truncation: Option<f64>,
    pub perturbation: Option<GroupElement>,
}

/// Ordered finite sampling of a transformation subgroup H.
///
/// Product grids over R⁺ × SO(2) are laid out scale-major: element `i` sits
/// at scale index `i / n_rot` and rotation index `i % n_rot`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubgroupGrid {
    tag: GroupTag,
    elements: Vec<GroupElement>,
    algebra: Vec<AlgebraVector>,
    meta: GridMeta,
}

fn rotation_angles(n: usize) -> Vec<f64> {
    (0..n).map(|i| TAU * i as f64 / n as f64).collect()
}

fn log_scales(n: usize, truncation: Option<f64>) -> Result<Vec<f64>> {
    if n == 1 {
        return Ok(vec![0.0]);
    }
    let t = truncation.ok_or_else(|| Error::arg("an R⁺ grid with n > 1 needs a truncation"))?;
    if !(t > 1.0) || !t.is_finite() {
        return Err(Error::arg(format!("truncation must exceed 1, got {t}")));
    }
    let top = t.ln();
    Ok((0..n)
        .map(|i| top * i as f64 / (n - 1) as f64)
        .collect())
}

impl SubgroupGrid {
    fn from_elements(tag: GroupTag, elements: Vec<GroupElement>, meta: GridMeta) -> Self {
        let algebra = elements.iter().map(|e| e.log()).collect();
        Self {
            tag,
            elements,
            algebra,
            meta,
        }
    }

    /// `n` equidistant algebra points mapped through exp. SO(2) grids start at
    /// 0 with spacing 2π/n; R⁺ grids climb geometrically from 1 to the
    /// truncation.
    pub fn uniform(tag: GroupTag, n: usize, truncation: Option<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::arg("grid needs at least one element"));
        }
        match tag {
            GroupTag::SO2 => {
                let elements = rotation_angles(n)
                    .into_iter()
                    .map(|t| AlgebraVector::new(tag, &[t]).map(|v| v.exp()))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Self::from_elements(
                    tag,
                    elements,
                    GridMeta {
                        n_scale: 1,
                        n_rot: n,
                        truncation: None,
                        perturbation: None,
                    },
                ))
            }
            GroupTag::Rplus => {
                let elements = log_scales(n, truncation)?
                    .into_iter()
                    .map(|l| AlgebraVector::new(tag, &[l]).map(|v| v.exp()))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Self::from_elements(
                    tag,
                    elements,
                    GridMeta {
                        n_scale: n,
                        n_rot: 1,
                        truncation: if n > 1 { truncation } else { None },
                        perturbation: None,
                    },
                ))
            }
            other => Err(Error::arg(format!(
                "uniform grids are built over SO2 or Rplus, not {other}; use `uniform_sim2`"
            ))),
        }
    }

    /// Cartesian product of an R⁺ ladder and an SO(2) grid, as translation-free
    /// Sim(2) elements.
    pub fn uniform_sim2(n_scale: usize, n_rot: usize, truncation: Option<f64>) -> Result<Self> {
        if n_scale == 0 || n_rot == 0 {
            return Err(Error::arg("grid needs at least one element per factor"));
        }
        let scales = log_scales(n_scale, truncation)?;
        let angles = rotation_angles(n_rot);
        let mut elements = Vec::with_capacity(n_scale * n_rot);
        for &l in &scales {
            for &t in &angles {
                elements.push(AlgebraVector::new(GroupTag::Sim2, &[0.0, 0.0, t, l])?.exp());
            }
        }
        Ok(Self::from_elements(
            GroupTag::Sim2,
            elements,
            GridMeta {
                n_scale,
                n_rot,
                truncation: if n_scale > 1 { truncation } else { None },
                perturbation: None,
            },
        ))
    }

    /// Single-element grid holding the identity.
    pub fn trivial(tag: GroupTag) -> Self {
        Self::from_elements(
            tag,
            vec![GroupElement::identity(tag)],
            GridMeta {
                n_scale: 1,
                n_rot: 1,
                truncation: None,
                perturbation: None,
            },
        )
    }

    pub fn tag(&self) -> GroupTag {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[GroupElement] {
        &self.elements
    }

    pub fn algebra(&self) -> &[AlgebraVector] {
        &self.algebra
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn n_scale(&self) -> usize {
        self.meta.n_scale
    }

    pub fn n_rot(&self) -> usize {
        self.meta.n_rot
    }

    pub fn scale_index(&self, i: usize) -> usize {
        i / self.meta.n_rot
    }

    pub fn rot_index(&self, i: usize) -> usize {
        i % self.meta.n_rot
    }

    /// Spacing of the R⁺ ladder in log-space (0 for a single scale).
    pub fn log_scale_step(&self) -> f64 {
        match (self.meta.n_scale, self.meta.truncation) {
            (n, Some(t)) if n > 1 => t.ln() / (n - 1) as f64,
            _ => 0.0,
        }
    }

    /// Left-multiplies every element by `h_eps`. Algebra spacing is preserved
    /// because the grid is uniform.
    pub fn perturb_by(&self, h_eps: &GroupElement) -> Result<Self> {
        let elements = self
            .elements
            .iter()
            .map(|e| h_eps.product(e))
            .collect::<Result<Vec<_>>>()?;
        let perturbation = match self.meta.perturbation {
            Some(prev) => Some(h_eps.product(&prev)?),
            None => Some(*h_eps),
        };
        Ok(Self::from_elements(
            self.tag,
            elements,
            GridMeta {
                perturbation,
                ..self.meta
            },
        ))
    }

    /// Draws one shared `h_ε` and left-multiplies the grid by it. The rotation
    /// factor is drawn uniformly from SO(2). The dilation factor is only
    /// perturbed when `allow_noncompact` is set; its log-scale is then drawn
    /// uniformly over one ladder step (or the whole truncated range for a
    /// single-scale grid).
    pub fn random_perturb<R: Rng + ?Sized>(&self, rng: &mut R, allow_noncompact: bool) -> Result<Self> {
        let draw_scale = |rng: &mut R| -> Result<f64> {
            let step = self.log_scale_step();
            let width = if step > 0.0 {
                step
            } else {
                self.meta
                    .truncation
                    .map(f64::ln)
                    .ok_or_else(|| Error::arg("cannot perturb an untruncated R⁺ grid"))?
            };
            Ok(rng.gen_range(0.0..width).exp())
        };
        let h_eps = match self.tag {
            GroupTag::SO2 => GroupElement::rotation(rng.gen_range(0.0..TAU)),
            GroupTag::Rplus => {
                if !allow_noncompact {
                    return Err(Error::arg(
                        "random sampling over the non-compact R⁺ is disabled; set the override flag",
                    ));
                }
                GroupElement::dilation(draw_scale(rng)?)?
            }
            GroupTag::Sim2 => {
                let theta = rng.gen_range(0.0..TAU);
                let s = if allow_noncompact && self.meta.n_scale > 1 {
                    draw_scale(rng)?
                } else {
                    1.0
                };
                GroupElement::sim2([0.0, 0.0], theta, s)?
            }
            other => return Err(Error::arg(format!("cannot perturb a grid over {other}"))),
        };
        self.perturb_by(&h_eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::angle_distance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn angles(grid: &SubgroupGrid) -> Vec<f64> {
        grid.elements().iter().map(|e| e.theta()).collect()
    }

    #[test]
    fn so2_four_elements() {
        let g = SubgroupGrid::uniform(GroupTag::SO2, 4, None).unwrap();
        let expected = [0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2];
        for (a, b) in angles(&g).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rplus_ladders() {
        let g = SubgroupGrid::uniform(GroupTag::Rplus, 1, None).unwrap();
        assert_eq!(g.elements()[0].s(), 1.0);
        let g = SubgroupGrid::uniform(GroupTag::Rplus, 3, Some(3f64.sqrt())).unwrap();
        let s: Vec<f64> = g.elements().iter().map(|e| e.s()).collect();
        assert!((s[0] - 1.0).abs() < 1e-15);
        assert!((s[1] - 1.316074).abs() < 1e-6);
        assert!((s[2] - 1.732051).abs() < 1e-6);
    }

    #[test]
    fn invalid_grids() {
        assert!(SubgroupGrid::uniform(GroupTag::SO2, 0, None).is_err());
        assert!(SubgroupGrid::uniform(GroupTag::Rplus, 3, None).is_err());
        assert!(SubgroupGrid::uniform(GroupTag::Rplus, 3, Some(0.5)).is_err());
        assert!(SubgroupGrid::uniform(GroupTag::SE2, 3, None).is_err());
    }

    #[test]
    fn sim2_product_layout() {
        let g = SubgroupGrid::uniform_sim2(2, 4, Some(2.0)).unwrap();
        assert_eq!(g.len(), 8);
        assert_eq!(g.scale_index(5), 1);
        assert_eq!(g.rot_index(5), 1);
        assert!((g.elements()[5].s() - 2.0).abs() < 1e-15);
        assert!((g.elements()[5].theta() - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn perturbation_examples() {
        let g = SubgroupGrid::uniform(GroupTag::SO2, 2, None).unwrap();
        let same = g.perturb_by(&GroupElement::identity(GroupTag::SO2)).unwrap();
        assert_eq!(angles(&same), angles(&g));
        let p = g.perturb_by(&GroupElement::rotation(FRAC_PI_2)).unwrap();
        let a = angles(&p);
        assert!((a[0] - FRAC_PI_2).abs() < 1e-15);
        assert!((a[1] - 3.0 * FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn perturbed_spacing_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = SubgroupGrid::uniform(GroupTag::SO2, 8, None)
            .unwrap()
            .random_perturb(&mut rng, false)
            .unwrap();
        let a = angles(&g);
        for i in 0..8 {
            let d = angle_distance(a[(i + 1) % 8], a[i]);
            assert!((d - FRAC_PI_4).abs() < 1e-12);
        }
    }

    #[test]
    fn noncompact_perturbation_needs_override() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = SubgroupGrid::uniform(GroupTag::Rplus, 3, Some(2.0)).unwrap();
        assert!(g.random_perturb(&mut rng, false).is_err());
        let p = g.random_perturb(&mut rng, true).unwrap();
        let r = p.elements()[1].s() / p.elements()[0].s();
        assert!((r - g.elements()[1].s()).abs() < 1e-12);
        // the Sim(2) scale factor stays put unless overridden
        let g = SubgroupGrid::uniform_sim2(3, 4, Some(2.0)).unwrap();
        let p = g.random_perturb(&mut rng, false).unwrap();
        for (a, b) in p.elements().iter().zip(g.elements()) {
            assert_eq!(a.s(), b.s());
        }
    }
}
