//! Elements of the affine groups R² ⋊ H for H ⊆ R⁺ × SO(2).
//!
//! Every element is stored as a translation `x`, an angle `θ ∈ [0, 2π)` and a
//! scale `s > 0`; coordinates a tag does not carry are pinned to the identity
//! (`x = 0`, `θ = 0`, `s = 1`). With that convention the semidirect product
//! of all six groups is the same formula,
//!
//! ```text
//! (x, θ, s) · (x', θ', s') = (x + s·R_θ x', θ + θ', s·s')
//! ```
//!
//! which is what the 3×3 homogeneous matrix `[[s·R_θ, x], [0, 1]]` multiplies
//! out to.

use std::f64::consts::TAU;
use std::fmt;

use crate::error::{Error, Result};

/// Angles this close below 2π are folded onto 0 so that `θ mod 2π` stays in
/// `[0, 2π)` under floating point round-off.
pub const ANGLE_SNAP: f64 = 1e-12;

/// Reduces an angle to `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r >= TAU - ANGLE_SNAP {
        0.0
    } else {
        r
    }
}

/// Shortest signed distance between two angles, in `(-π, π]`.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    if d > std::f64::consts::PI {
        d - TAU
    } else {
        d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GroupTag {
    R2,
    SO2,
    Rplus,
    SE2,
    R2xRplus,
    Sim2,
}

impl GroupTag {
    pub const ALL: [GroupTag; 6] = [
        GroupTag::R2,
        GroupTag::SO2,
        GroupTag::Rplus,
        GroupTag::SE2,
        GroupTag::R2xRplus,
        GroupTag::Sim2,
    ];

    pub fn has_translation(self) -> bool {
        matches!(
            self,
            GroupTag::R2 | GroupTag::SE2 | GroupTag::R2xRplus | GroupTag::Sim2
        )
    }

    pub fn has_rotation(self) -> bool {
        matches!(self, GroupTag::SO2 | GroupTag::SE2 | GroupTag::Sim2)
    }

    pub fn has_scale(self) -> bool {
        matches!(self, GroupTag::Rplus | GroupTag::R2xRplus | GroupTag::Sim2)
    }

    /// Dimension of the Lie algebra.
    pub fn algebra_dim(self) -> usize {
        2 * self.has_translation() as usize + self.has_rotation() as usize + self.has_scale() as usize
    }

    /// Dimension of the algebra of the transformation part H.
    pub fn subgroup_dim(self) -> usize {
        self.has_rotation() as usize + self.has_scale() as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            GroupTag::R2 => "R2",
            GroupTag::SO2 => "SO2",
            GroupTag::Rplus => "Rplus",
            GroupTag::SE2 => "SE2",
            GroupTag::R2xRplus => "R2xRplus",
            GroupTag::Sim2 => "Sim2",
        }
    }
}

impl fmt::Display for GroupTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for GroupTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GroupTag::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::arg(format!("unknown group `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupElement {
    tag: GroupTag,
    translation: [f64; 2],
    angle: f64,
    scale: f64,
}

impl GroupElement {
    /// Builds an element, canonicalizing the angle. Coordinates the tag does
    /// not carry must sit at their identity value.
    pub fn new(tag: GroupTag, translation: [f64; 2], angle: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::arg(format!("scale must be positive, got {scale}")));
        }
        if !tag.has_translation() && translation != [0.0, 0.0] {
            return Err(Error::arg(format!("{tag} carries no translation")));
        }
        if !tag.has_rotation() && angle != 0.0 {
            return Err(Error::arg(format!("{tag} carries no rotation")));
        }
        if !tag.has_scale() && scale != 1.0 {
            return Err(Error::arg(format!("{tag} carries no scale")));
        }
        Ok(Self::raw(tag, translation, angle, scale))
    }

    fn raw(tag: GroupTag, translation: [f64; 2], angle: f64, scale: f64) -> Self {
        Self {
            tag,
            translation,
            angle: wrap_angle(angle),
            scale,
        }
    }

    pub fn identity(tag: GroupTag) -> Self {
        Self::raw(tag, [0.0, 0.0], 0.0, 1.0)
    }

    pub fn translation(x: [f64; 2]) -> Self {
        Self::raw(GroupTag::R2, x, 0.0, 1.0)
    }

    pub fn rotation(theta: f64) -> Self {
        Self::raw(GroupTag::SO2, [0.0, 0.0], theta, 1.0)
    }

    pub fn dilation(s: f64) -> Result<Self> {
        Self::new(GroupTag::Rplus, [0.0, 0.0], 0.0, s)
    }

    pub fn se2(x: [f64; 2], theta: f64) -> Self {
        Self::raw(GroupTag::SE2, x, theta, 1.0)
    }

    pub fn r2_rplus(x: [f64; 2], s: f64) -> Result<Self> {
        Self::new(GroupTag::R2xRplus, x, 0.0, s)
    }

    pub fn sim2(x: [f64; 2], theta: f64, s: f64) -> Result<Self> {
        Self::new(GroupTag::Sim2, x, theta, s)
    }

    pub fn tag(&self) -> GroupTag {
        self.tag
    }

    pub fn x(&self) -> [f64; 2] {
        self.translation
    }

    pub fn theta(&self) -> f64 {
        self.angle
    }

    pub fn s(&self) -> f64 {
        self.scale
    }

    pub fn product(&self, other: &GroupElement) -> Result<GroupElement> {
        if self.tag != other.tag {
            return Err(Error::arg(format!(
                "cannot multiply {} by {}",
                self.tag, other.tag
            )));
        }
        let [tx, ty] = self.act_linear(other.translation);
        Ok(Self::raw(
            self.tag,
            [self.translation[0] + tx, self.translation[1] + ty],
            self.angle + other.angle,
            self.scale * other.scale,
        ))
    }

    pub fn inverse(&self) -> GroupElement {
        let inv_scale = 1.0 / self.scale;
        let (sin, cos) = (-self.angle).sin_cos();
        let [x, y] = self.translation;
        let rx = cos * x - sin * y;
        let ry = sin * x + cos * y;
        Self::raw(
            self.tag,
            [-inv_scale * rx, -inv_scale * ry],
            -self.angle,
            inv_scale,
        )
    }

    /// `self⁻¹ · other`, the relative element kernels are evaluated at.
    pub fn relative(&self, other: &GroupElement) -> Result<GroupElement> {
        self.inverse().product(other)
    }

    /// Determinant of the 2×2 linear part acting on R².
    pub fn determinant(&self) -> f64 {
        self.scale * self.scale
    }

    /// Linear part `s·R_θ` applied to a vector.
    pub fn act_linear(&self, p: [f64; 2]) -> [f64; 2] {
        let (sin, cos) = self.angle.sin_cos();
        [
            self.scale * (cos * p[0] - sin * p[1]),
            self.scale * (sin * p[0] + cos * p[1]),
        ]
    }

    /// Affine action `s·R_θ p + x` on a point of the plane.
    pub fn act_on_point(&self, p: [f64; 2]) -> [f64; 2] {
        let [ax, ay] = self.act_linear(p);
        [ax + self.translation[0], ay + self.translation[1]]
    }

    /// Homogeneous 3×3 matrix representation, row-major.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let (sin, cos) = self.angle.sin_cos();
        let s = self.scale;
        [
            [s * cos, -s * sin, self.translation[0]],
            [s * sin, s * cos, self.translation[1]],
            [0.0, 0.0, 1.0],
        ]
    }

    /// Logarithm, split per subgroup: translation coordinates verbatim, the
    /// angle mod 2π, and the log-scale.
    pub fn log(&self) -> AlgebraVector {
        let mut v = AlgebraVector::zero(self.tag);
        let mut k = 0;
        if self.tag.has_translation() {
            v.coords[0] = self.translation[0];
            v.coords[1] = self.translation[1];
            k = 2;
        }
        if self.tag.has_rotation() {
            v.coords[k] = self.angle;
            k += 1;
        }
        if self.tag.has_scale() {
            v.coords[k] = self.scale.ln();
        }
        v
    }

    /// Algebra coordinates of the H-part only (`[θ]`, `[ln s]` or `[θ, ln s]`).
    pub fn subgroup_log(&self) -> ([f64; 2], usize) {
        let mut out = [0.0; 2];
        let mut k = 0;
        if self.tag.has_rotation() {
            out[k] = self.angle;
            k += 1;
        }
        if self.tag.has_scale() {
            out[k] = self.scale.ln();
            k += 1;
        }
        (out, k)
    }

    /// Largest coordinate-wise deviation from `other`, with angles compared on
    /// the circle.
    pub fn max_deviation(&self, other: &GroupElement) -> f64 {
        let dx = (self.translation[0] - other.translation[0]).abs();
        let dy = (self.translation[1] - other.translation[1]).abs();
        let dt = angle_distance(self.angle, other.angle).abs();
        let ds = (self.scale - other.scale).abs();
        dx.max(dy).max(dt).max(ds)
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}(x=({:.6}, {:.6}), θ={:.6}, s={:.6})",
            self.tag, self.translation[0], self.translation[1], self.angle, self.scale
        )
    }
}

/// Coordinates in the canonical basis of the Lie algebra. Layout per tag is
/// `[x, y]`, `[θ]`, `[ln s]`, `[x, y, θ]`, `[x, y, ln s]`, `[x, y, θ, ln s]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlgebraVector {
    tag: GroupTag,
    coords: [f64; 4],
}

impl AlgebraVector {
    pub fn zero(tag: GroupTag) -> Self {
        Self {
            tag,
            coords: [0.0; 4],
        }
    }

    pub fn new(tag: GroupTag, coords: &[f64]) -> Result<Self> {
        if coords.len() != tag.algebra_dim() {
            return Err(Error::arg(format!(
                "{tag} algebra has dimension {}, got {}",
                tag.algebra_dim(),
                coords.len()
            )));
        }
        let mut v = Self::zero(tag);
        v.coords[..coords.len()].copy_from_slice(coords);
        Ok(v)
    }

    pub fn tag(&self) -> GroupTag {
        self.tag
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.tag.algebra_dim()]
    }

    pub fn exp(&self) -> GroupElement {
        let tag = self.tag;
        let mut k = 0;
        let mut x = [0.0, 0.0];
        if tag.has_translation() {
            x = [self.coords[0], self.coords[1]];
            k = 2;
        }
        let mut theta = 0.0;
        if tag.has_rotation() {
            theta = self.coords[k];
            k += 1;
        }
        let mut s = 1.0;
        if tag.has_scale() {
            s = self.coords[k].exp();
        }
        GroupElement::raw(tag, x, theta, s)
    }
}
