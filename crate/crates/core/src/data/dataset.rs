use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::idx::load_mnist;
use super::transform::resample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MNIST_SIDE: usize = 28;
/// Scale range used for scaled MNIST variants.
pub const SCALE_RANGE: (f64, f64) = (0.3, 1.0);
/// Train/validation/test sizes of the rotated-MNIST protocol.
pub const ROT_MNIST_SPLIT: [usize; 3] = [10_000, 2_000, 50_000];

/// Which random transform produced a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Identity,
    Rotated,
    Scaled,
    RotScaled,
    Bars,
}

impl TransformKind {
    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Identity => "identity",
            TransformKind::Rotated => "rotated",
            TransformKind::Scaled => "scaled",
            TransformKind::RotScaled => "rot_scaled",
            TransformKind::Bars => "bars",
        }
    }
}

impl std::str::FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            TransformKind::Identity,
            TransformKind::Rotated,
            TransformKind::Scaled,
            TransformKind::RotScaled,
            TransformKind::Bars,
        ]
        .into_iter()
        .find(|k| k.name() == s.to_ascii_lowercase())
        .ok_or_else(|| Error::arg(format!("unknown dataset transform `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub transform: TransformKind,
    pub seed: u64,
    pub split: String,
}

/// Labelled single-channel square images with values in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Dataset {
    /// `(n, 1, side, side)`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, provenance: Provenance) -> Result<Self> {
        match images.shape() {
            &[n, 1, h, w] if n == labels.len() && h == w => Ok(Self {
                images,
                labels,
                provenance,
            }),
            s => Err(Error::shape(format!(
                "images {s:?} with {} labels; expected (n, 1, side, side)",
                labels.len()
            ))),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn side(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let p = self.side() * self.side();
        &self.images.data()[i * p..(i + 1) * p]
    }

    /// Stacks the selected images into `(len, 1, side, side)`.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let side = self.side();
        let mut data = Vec::with_capacity(idx.len() * side * side);
        for &i in idx {
            data.extend_from_slice(self.image(i));
        }
        (
            Tensor::new(&[idx.len(), 1, side, side], data).unwrap(),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn subset(&self, idx: &[usize], split: &str) -> Dataset {
        let (images, labels) = self.batch(idx);
        Dataset {
            images,
            labels,
            provenance: Provenance {
                split: split.to_string(),
                ..self.provenance.clone()
            },
        }
    }

    /// Applies `(θ, s)` drawn per image by `draw`.
    fn transformed(
        &self,
        kind: TransformKind,
        seed: u64,
        mut draw: impl FnMut(&mut ChaCha8Rng) -> (f64, f64),
    ) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = self.side();
        let mut data = Vec::with_capacity(self.images.numel());
        for i in 0..self.len() {
            let (theta, s) = draw(&mut rng);
            data.extend(resample(self.image(i), side, theta, s)?);
        }
        Ok(Dataset {
            images: Tensor::new(self.images.shape(), data)?,
            labels: self.labels.clone(),
            provenance: Provenance {
                transform: kind,
                seed,
                split: self.provenance.split.clone(),
            },
        })
    }

    /// Every image rotated by an angle drawn uniformly from `[0, 2π)`.
    pub fn make_rotated(&self, seed: u64) -> Result<Dataset> {
        self.transformed(TransformKind::Rotated, seed, |r| (r.gen_range(0.0..TAU), 1.0))
    }

    /// Every image shrunk by a factor drawn uniformly from `[0.3, 1]`.
    pub fn make_scaled(&self, seed: u64) -> Result<Dataset> {
        self.transformed(TransformKind::Scaled, seed, |r| {
            (0.0, r.gen_range(SCALE_RANGE.0..=SCALE_RANGE.1))
        })
    }

    /// Random rotation and scale, resampled in one pass.
    pub fn make_rot_scaled(&self, seed: u64) -> Result<Dataset> {
        self.transformed(TransformKind::RotScaled, seed, |r| {
            (r.gen_range(0.0..TAU), r.gen_range(SCALE_RANGE.0..=SCALE_RANGE.1))
        })
    }

    /// Applies one fixed rotation and scale to every image.
    pub fn transform_all(&self, theta: f64, s: f64) -> Result<Dataset> {
        self.transformed(self.provenance.transform, self.provenance.seed, |_| (theta, s))
    }
}

/// Loads an MNIST-style IDX pair, scaling pixels to `[0, 1]`.
pub fn load_dataset(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (img, lab) = load_mnist(images, labels)?;
    let [n, h, w] = [img.dims[0], img.dims[1], img.dims[2]];
    if h != w {
        return Err(Error::shape(format!("non-square images {h}×{w}")));
    }
    let images = Tensor::new(&[n, 1, h, w], img.data.iter().map(|&b| b as f64 / 255.0).collect())?;
    Dataset::new(
        images,
        lab.data.iter().map(|&b| b as usize).collect(),
        Provenance {
            transform: TransformKind::Identity,
            seed: 0,
            split: "all".into(),
        },
    )
}

/// Disjoint shuffled index sets of the requested sizes.
pub fn split_indices(n: usize, sizes: &[usize], seed: u64) -> Result<Vec<Vec<usize>>> {
    let need: usize = sizes.iter().sum();
    if need > n {
        return Err(Error::arg(format!("split needs {need} samples, only {n} available")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in sizes {
        out.push(idx[start..start + s].to_vec());
        start += s;
    }
    Ok(out)
}

/// The 10 000 / 2 000 / 50 000 train/validation/test protocol.
pub fn split_paper(n: usize, seed: u64) -> Result<[Vec<usize>; 3]> {
    let [a, b, c]: [Vec<usize>; 3] = split_indices(n, &ROT_MNIST_SPLIT, seed)?.try_into().unwrap();
    Ok([a, b, c])
}

/// Number of orientation classes in [`synth_oriented_bars`].
pub const BAR_CLASSES: usize = 4;

/// Bars at orientations `c·π/8`, `c = 0..4`, with random length, width and
/// offset, anti-aliased on a 28×28 canvas. The label is the orientation
/// class; no two classes are related by a quarter turn.
pub fn synth_oriented_bars(n: usize, seed: u64) -> Dataset {
    let side = MNIST_SIDE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % BAR_CLASSES).collect();
    labels.shuffle(&mut rng);
    let c = (side as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(n * side * side);
    for &label in &labels {
        let angle = label as f64 * PI / 8.0;
        let (dx, dy) = (angle.cos(), angle.sin());
        let half_len = rng.gen_range(7.0..11.0);
        let half_width = rng.gen_range(0.8..1.6);
        let (ox, oy) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        for row in 0..side {
            for col in 0..side {
                let (px, py) = (col as f64 - c - ox, row as f64 - c - oy);
                let along = px * dx + py * dy;
                let across = -px * dy + py * dx;
                let d_len = (along.abs() - half_len).max(0.0);
                let d = (d_len * d_len + (across.abs() - half_width).max(0.0).powi(2)).sqrt();
                data.push((1.0 - d).clamp(0.0, 1.0));
            }
        }
    }
    Dataset {
        images: Tensor::new(&[n, 1, side, side], data).unwrap(),
        labels,
        provenance: Provenance {
            transform: TransformKind::Bars,
            seed,
            split: "synthetic".into(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_disjoint_and_seeded() {
        let [a, b, c] = split_paper(62_000, 4).unwrap();
        assert_eq!([a.len(), b.len(), c.len()], ROT_MNIST_SPLIT);
        let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 62_000);
        assert_eq!(split_paper(62_000, 4).unwrap()[1], b);
        assert!(split_paper(5_000, 4).is_err());
    }

    #[test]
    fn bars_are_balanced_deterministic_and_in_range() {
        assert!(synth_oriented_bars(0, 1).is_empty());
        let d = synth_oriented_bars(103, 9);
        let mut counts = [0usize; BAR_CLASSES];
        for &l in &d.labels {
            counts[l] += 1;
        }
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        assert!(d.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(synth_oriented_bars(103, 9).images, d.images);
    }

    #[test]
    fn transforms_are_reproducible_and_keep_range() {
        let d = synth_oriented_bars(6, 2);
        for t in [
            d.make_rotated(5).unwrap(),
            d.make_scaled(5).unwrap(),
            d.make_rot_scaled(5).unwrap(),
        ] {
            assert!(t.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!(t.labels, d.labels);
        }
        assert_eq!(d.make_rotated(5).unwrap().images, d.make_rotated(5).unwrap().images);
        assert_ne!(d.make_rotated(5).unwrap().images, d.make_rotated(6).unwrap().images);
    }
}
