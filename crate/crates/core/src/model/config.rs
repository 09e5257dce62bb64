use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kernelnet::{Factorization, SirenConfig};
use crate::lie::{GroupTag, SubgroupGrid};
use crate::tensor::Padding;

/// How layer grids are chosen during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SamplingMode {
    /// Fixed uniform grids.
    Discretize,
    /// Uniform grids left-multiplied by a fresh random element per layer and
    /// training step.
    Random,
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingMode::Discretize => "discretize",
            SamplingMode::Random => "random",
        })
    }
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "discretize" | "discrete" => Ok(SamplingMode::Discretize),
            "random" => Ok(SamplingMode::Random),
            _ => Err(Error::arg(format!("unknown sampling mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GCNNConfig {
    /// SE2, R2xRplus or Sim2.
    pub group: GroupTag,
    pub factorization: Factorization,
    pub n_rotations: usize,
    pub n_scales: usize,
    pub scale_truncation: f64,
    pub sampling: SamplingMode,
    /// Permits random sampling over the non-compact scale factor.
    pub allow_noncompact: bool,
    pub stencil: usize,
    /// Lifting, first block and second block widths.
    pub channels: [usize; 3],
    pub siren: SirenConfig,
    pub head_hidden: usize,
    pub classes: usize,
    pub scale_support: usize,
    pub padding: Padding,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub seed: u64,
}

impl Default for GCNNConfig {
    fn default() -> Self {
        Self {
            group: GroupTag::SE2,
            factorization: Factorization::Separable,
            n_rotations: 8,
            n_scales: 1,
            scale_truncation: 3f64.sqrt(),
            sampling: SamplingMode::Discretize,
            allow_noncompact: false,
            stencil: 5,
            channels: [32, 32, 64],
            siren: SirenConfig::default(),
            head_hidden: 64,
            classes: 10,
            scale_support: 2,
            padding: Padding::Zero,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            seed: 0,
        }
    }
}

impl GCNNConfig {
    /// The transformation subgroup H of the configured group.
    pub fn subgroup(&self) -> Result<GroupTag> {
        match self.group {
            GroupTag::SE2 => Ok(GroupTag::SO2),
            GroupTag::R2xRplus => Ok(GroupTag::Rplus),
            GroupTag::Sim2 => Ok(GroupTag::Sim2),
            other => Err(Error::config(
                "group",
                format!("expected SE2, R2xRplus or Sim2, got {other}"),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.subgroup()?;
        if self.factorization == Factorization::HSeparable && h != GroupTag::Sim2 {
            return Err(Error::config("factorization", "hseparable requires group=Sim2"));
        }
        if self.n_rotations == 0 || self.n_scales == 0 {
            return Err(Error::config("n_rotations", "grid sizes must be positive"));
        }
        if h == GroupTag::SO2 && self.n_scales != 1 {
            return Err(Error::config("n_scales", "SE2 has no scale axis; use n_scales=1"));
        }
        if h == GroupTag::Rplus && self.n_rotations != 1 {
            return Err(Error::config("n_rotations", "R2xRplus has no rotation axis; use n_rotations=1"));
        }
        if self.stencil.is_multiple_of(2) {
            return Err(Error::config("stencil", "must be odd"));
        }
        if self.channels.contains(&0) || self.head_hidden == 0 || self.classes < 2 {
            return Err(Error::config("channels", "widths must be positive"));
        }
        if self.sampling == SamplingMode::Random
            && h == GroupTag::Rplus
            && !self.allow_noncompact
        {
            return Err(Error::config(
                "sampling",
                "random sampling over R⁺ is non-compact; set allow_noncompact=true to force it",
            ));
        }
        self.uniform_grid()?;
        Ok(())
    }

    /// The unperturbed grid shared by every layer.
    pub fn uniform_grid(&self) -> Result<SubgroupGrid> {
        let trunc = Some(self.scale_truncation);
        match self.subgroup()? {
            GroupTag::SO2 => SubgroupGrid::uniform(GroupTag::SO2, self.n_rotations, None),
            GroupTag::Rplus => SubgroupGrid::uniform(GroupTag::Rplus, self.n_scales, trunc),
            _ => SubgroupGrid::uniform_sim2(self.n_scales, self.n_rotations, trunc),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
    /// Evaluate on the held-out set every this many epochs (0 = never).
    pub eval_every: usize,
    /// Training images used to re-estimate normalization statistics on the
    /// evaluation grids before each evaluation and after the last epoch
    /// (0 = keep the running averages).
    pub bn_recalibration: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            lr: 1e-4,
            weight_decay: 1e-4,
            schedule: LrSchedule::Constant,
            eval_every: 1,
            bn_recalibration: 0,
            seed: 0,
        }
    }
}

/// Per-epoch learning-rate policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from `lr` at the first epoch towards 0 after the last.
    Cosine,
}

impl LrSchedule {
    /// Learning rate for the 1-based `epoch` out of `epochs`.
    pub fn rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let t = (epoch - 1) as f64 / epochs.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        }
    }
}

impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            _ => Err(Error::config("schedule", format!("unknown schedule `{s}`"))),
        }
    }
}
