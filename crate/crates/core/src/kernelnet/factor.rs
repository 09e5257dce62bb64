use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How a group-convolution kernel splits into factors. `I`/`J` are input and
/// output channels, `H`/`H̃` output and input subgroup grids, `U` the stencil.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Factorization {
    /// `k^{ij}(x, h)`.
    Nonseparable,
    /// `k_C^{ij} · k^j(x, h)`.
    Dseparable,
    /// `k_H^{ij}(h) · k_{R²}^j(x)`.
    Separable,
    /// `k_H^{ij}(h) · k_{R²}^{ij}(x)`.
    Gseparable,
    /// `k_C^{ij} · k_H^j(h) · k_{R²}^j(x)`.
    DGseparable,
    /// `k_{R⁺}^{ij}(s) · k_{SO(2)}^j(θ) · k_{R²}^j(x)`, Sim(2) only.
    HSeparable,
}

impl Factorization {
    pub const ALL: [Factorization; 6] = [
        Factorization::Nonseparable,
        Factorization::Dseparable,
        Factorization::Separable,
        Factorization::Gseparable,
        Factorization::DGseparable,
        Factorization::HSeparable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Factorization::Nonseparable => "nonseparable",
            Factorization::Dseparable => "dseparable",
            Factorization::Separable => "separable",
            Factorization::Gseparable => "gseparable",
            Factorization::DGseparable => "dgseparable",
            Factorization::HSeparable => "hseparable",
        }
    }

    /// Whether a learned channel-mixing matrix `k_C` is part of the kernel.
    pub fn has_channel_factor(self) -> bool {
        matches!(self, Factorization::Dseparable | Factorization::DGseparable)
    }
}

impl fmt::Display for Factorization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Factorization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        Factorization::ALL
            .into_iter()
            .find(|f| f.name() == key)
            .ok_or_else(|| Error::arg(format!("unknown factorization `{s}`")))
    }
}

/// Kernel values per factor. Shapes use `H` (output grid), `H̃` (input grid),
/// `U` (stencil points, row-major), `J` and `I` (output/input channels);
/// Sim(2) grids split into `S` scales and `R` rotations.
#[derive(Clone, Debug, PartialEq)]
pub enum Factors<T> {
    /// `(H, U, J, I)`: the lifting kernel on R² at each `h⁻¹u`.
    Lift { spatial: T },
    /// `(H, H̃, U, J, I)`.
    Nonseparable { full: T },
    /// `channel: (J, I)`, `joint: (H, H̃, U, J)`.
    Dseparable { channel: T, joint: T },
    /// `subgroup: (H, H̃, J, I)`, `spatial: (H, U, J)`.
    Separable { subgroup: T, spatial: T },
    /// `subgroup: (H, H̃, J, I)`, `spatial: (H, U, J, I)`.
    Gseparable { subgroup: T, spatial: T },
    /// `channel: (J, I)`, `subgroup: (H, H̃, J)`, `spatial: (H, U, J)`.
    DGseparable { channel: T, subgroup: T, spatial: T },
    /// `scale: (S, S̃, J, I)`, `rotation: (R, R̃, J)`, `spatial: (H, U, J)`.
    HSeparable { scale: T, rotation: T, spatial: T },
}

impl<T> Factors<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Factors<U> {
        match self {
            Factors::Lift { spatial } => Factors::Lift { spatial: f(spatial) },
            Factors::Nonseparable { full } => Factors::Nonseparable { full: f(full) },
            Factors::Dseparable { channel, joint } => Factors::Dseparable {
                channel: f(channel),
                joint: f(joint),
            },
            Factors::Separable { subgroup, spatial } => Factors::Separable {
                subgroup: f(subgroup),
                spatial: f(spatial),
            },
            Factors::Gseparable { subgroup, spatial } => Factors::Gseparable {
                subgroup: f(subgroup),
                spatial: f(spatial),
            },
            Factors::DGseparable {
                channel,
                subgroup,
                spatial,
            } => Factors::DGseparable {
                channel: f(channel),
                subgroup: f(subgroup),
                spatial: f(spatial),
            },
            Factors::HSeparable {
                scale,
                rotation,
                spatial,
            } => Factors::HSeparable {
                scale: f(scale),
                rotation: f(rotation),
                spatial: f(spatial),
            },
        }
    }

    /// The factorization this layout belongs to; `None` for a lifting kernel.
    pub fn factorization(&self) -> Option<Factorization> {
        Some(match self {
            Factors::Lift { .. } => return None,
            Factors::Nonseparable { .. } => Factorization::Nonseparable,
            Factors::Dseparable { .. } => Factorization::Dseparable,
            Factors::Separable { .. } => Factorization::Separable,
            Factors::Gseparable { .. } => Factorization::Gseparable,
            Factors::DGseparable { .. } => Factorization::DGseparable,
            Factors::HSeparable { .. } => Factorization::HSeparable,
        })
    }

    /// The factor whose values depend on pairs `(h, h̃)` of subgroup elements.
    pub fn subgroup_factor(&self) -> Option<&T> {
        match self {
            Factors::Lift { .. } => None,
            Factors::Nonseparable { full } => Some(full),
            Factors::Dseparable { joint, .. } => Some(joint),
            Factors::Separable { subgroup, .. }
            | Factors::Gseparable { subgroup, .. }
            | Factors::DGseparable { subgroup, .. } => Some(subgroup),
            Factors::HSeparable { scale, .. } => Some(scale),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for f in Factorization::ALL {
            assert_eq!(f.name().parse::<Factorization>().unwrap(), f);
        }
        assert_eq!("H-Separable".parse::<Factorization>().unwrap(), Factorization::HSeparable);
        assert!("diagonal".parse::<Factorization>().is_err());
    }
}
