//! Augmentation families and domain labelling.
//!
//! Each family in a [`Partition`] defines one subdomain. A sample produced by
//! family `d` carries domain label `d`; family 0 is always the identity, so
//! unaugmented images form their own domain.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{self, StreamRng};
use crate::tensor::{Scalar, Tensor};

/// Transformation kind and its parameter ranges.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)
)]
pub enum AugKind {
    Identity,
    /// Rotation by an angle drawn from `±max_rotation_deg`, then a
    /// horizontal flip with probability `flip_prob`.
    Geometric { max_rotation_deg: f64, flip_prob: f64 },
    /// `clamp(a·x + b)` with `a ∈ 1 ± contrast`, `b ∈ ±brightness`.
    Color { brightness: f64, contrast: f64 },
    Noise { sigma: f64 },
    /// One square of area `fraction·H·W` set to `fill`.
    Cutout {
        fraction: f64,
        #[cfg_attr(feature = "serde", serde(default = "default_fill"))]
        fill: f64,
    },
}

#[cfg(feature = "serde")]
fn default_fill() -> f64 {
    DEFAULT_CUTOUT_FILL
}

pub const DEFAULT_CUTOUT_FILL: f64 = 0.5;

impl AugKind {
    pub fn name(&self) -> &'static str {
        match self {
            AugKind::Identity => "identity",
            AugKind::Geometric { .. } => "geometric",
            AugKind::Color { .. } => "color",
            AugKind::Noise { .. } => "noise",
            AugKind::Cutout { .. } => "cutout",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, name: &str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::param(name, reason))
            }
        };
        match *self {
            AugKind::Identity => Ok(()),
            AugKind::Geometric {
                max_rotation_deg,
                flip_prob,
            } => {
                check(
                    (0.0..=180.0).contains(&max_rotation_deg),
                    "max_rotation_deg",
                    "must lie in [0, 180]",
                )?;
                check((0.0..=1.0).contains(&flip_prob), "flip_prob", "must lie in [0, 1]")
            }
            AugKind::Color { brightness, contrast } => {
                check((0.0..=1.0).contains(&brightness), "brightness", "must lie in [0, 1]")?;
                check((0.0..1.0).contains(&contrast), "contrast", "must lie in [0, 1)")
            }
            AugKind::Noise { sigma } => check(sigma.is_finite() && sigma >= 0.0, "sigma", "must be finite and >= 0"),
            AugKind::Cutout { fraction, fill } => {
                check(fraction > 0.0 && fraction < 1.0, "fraction", "must lie in (0, 1)")?;
                check((0.0..=1.0).contains(&fill), "fill", "must lie in [0, 1]")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugFamily {
    pub id: usize,
    pub kind: AugKind,
}

/// The K augmentation families and the probability of drawing each one.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    families: Vec<AugFamily>,
    probabilities: Vec<f64>,
}

impl Partition {
    pub fn new(kinds: Vec<AugKind>, probabilities: Vec<f64>) -> Result<Self> {
        if kinds.len() < 2 {
            return Err(Error::param(
                "families",
                "need the identity family plus at least one augmentation",
            ));
        }
        if kinds[0] != AugKind::Identity {
            return Err(Error::param("families", "family 0 must be the identity"));
        }
        for kind in &kinds {
            kind.validate()?;
        }
        validate_probabilities(&probabilities, kinds.len())?;
        let families = kinds
            .into_iter()
            .enumerate()
            .map(|(id, kind)| AugFamily { id, kind })
            .collect();
        Ok(Partition {
            families,
            probabilities,
        })
    }

    /// Five families drawn uniformly: identity, rotation ±15° with flips,
    /// brightness/contrast ±0.2, Gaussian noise σ = 0.05, cutout of 25%.
    pub fn standard() -> Self {
        Partition::new(
            vec![
                AugKind::Identity,
                AugKind::Geometric {
                    max_rotation_deg: 15.0,
                    flip_prob: 0.5,
                },
                AugKind::Color {
                    brightness: 0.2,
                    contrast: 0.2,
                },
                AugKind::Noise { sigma: 0.05 },
                AugKind::Cutout {
                    fraction: 0.25,
                    fill: DEFAULT_CUTOUT_FILL,
                },
            ],
            vec![0.2; 5],
        )
        .expect("standard partition is valid")
    }

    /// Same families under a different draw distribution.
    pub fn with_probabilities(&self, probabilities: Vec<f64>) -> Result<Self> {
        let kinds = self.families.iter().map(|f| f.kind.clone()).collect();
        Partition::new(kinds, probabilities)
    }

    pub fn domain_count(&self) -> usize {
        self.families.len()
    }

    pub fn families(&self) -> &[AugFamily] {
        &self.families
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    fn draw_domain(&self, rng: &mut StreamRng) -> usize {
        let u: f64 = rng.random();
        let mut cumulative = 0.0;
        let mut last_positive = 0;
        for (d, &p) in self.probabilities.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            last_positive = d;
            cumulative += p;
            if u < cumulative {
                return d;
            }
        }
        last_positive
    }
}

pub fn validate_probabilities(probabilities: &[f64], k: usize) -> Result<()> {
    if probabilities.len() != k {
        return Err(Error::param(
            "probabilities",
            format!("expected {k} entries, got {}", probabilities.len()),
        ));
    }
    if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::param("probabilities", "entries must be finite and non-negative"));
    }
    let total: f64 = probabilities.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::param("probabilities", format!("must sum to 1, got {total}")));
    }
    Ok(())
}

/// An augmented image with its class label `y` and domain label `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainLabeledSample<T> {
    pub image: Tensor<T>,
    pub class_label: usize,
    pub domain_label: usize,
    /// Index of the source image in its dataset.
    pub source_index: usize,
}

/// Where a pipeline run draws its per-sample randomness from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentKey {
    pub seed: u64,
    pub stream: &'static str,
    pub epoch: u64,
}

impl AugmentKey {
    pub fn training(seed: u64, epoch: u64) -> Self {
        AugmentKey {
            seed,
            stream: rng::AUGMENT,
            epoch,
        }
    }

    fn sample_rng(&self, index: usize) -> StreamRng {
        rng::stream(self.seed, self.stream, self.epoch, index as u64)
    }

    fn variant_rng(&self, index: usize, domain: usize) -> StreamRng {
        rng::stream(self.seed, self.stream, self.epoch, ((domain as u64) << 48) ^ index as u64 ^ (1 << 63))
    }
}

/// Draws one family per sample and applies it. Sample randomness depends
/// only on `(key, source index)`.
pub fn label_and_augment<'a, T: Scalar>(
    samples: impl IntoIterator<Item = (usize, &'a Tensor<T>, usize)>,
    partition: &Partition,
    key: AugmentKey,
) -> Result<Vec<DomainLabeledSample<T>>> {
    samples
        .into_iter()
        .map(|(index, image, class_label)| {
            let mut rng = key.sample_rng(index);
            let d = partition.draw_domain(&mut rng);
            Ok(DomainLabeledSample {
                image: apply_family(&partition.families[d], image, &mut rng)?,
                class_label,
                domain_label: d,
                source_index: index,
            })
        })
        .collect()
}

/// Emits every family's variant of every sample.
pub fn label_and_augment_all<'a, T: Scalar>(
    samples: impl IntoIterator<Item = (usize, &'a Tensor<T>, usize)>,
    partition: &Partition,
    key: AugmentKey,
) -> Result<Vec<DomainLabeledSample<T>>> {
    let mut out = Vec::new();
    for (index, image, class_label) in samples {
        for family in &partition.families {
            let mut rng = key.variant_rng(index, family.id);
            out.push(DomainLabeledSample {
                image: apply_family(family, image, &mut rng)?,
                class_label,
                domain_label: family.id,
                source_index: index,
            });
        }
    }
    Ok(out)
}

fn image_dims<T: Scalar>(image: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::InvalidShape {
            op: "augment",
            shape: image.shape().to_vec(),
            reason: "images must be C×H×W".into(),
        }),
    }
}

fn clamp01<T: Scalar>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

pub fn apply_family<T: Scalar>(family: &AugFamily, image: &Tensor<T>, rng: &mut StreamRng) -> Result<Tensor<T>> {
    image_dims(image)?;
    if image.data().iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
        return Err(Error::param("image", "pixel values must lie in [0, 1]"));
    }
    family.kind.validate()?;
    match family.kind {
        AugKind::Identity => Ok(image.clone()),
        AugKind::Geometric {
            max_rotation_deg,
            flip_prob,
        } => {
            let angle = if max_rotation_deg > 0.0 {
                rng.random_range(-max_rotation_deg..=max_rotation_deg)
            } else {
                0.0
            };
            let flip = rng.random::<f64>() < flip_prob;
            let rotated = rotate(image, angle)?;
            Ok(if flip { hflip(&rotated)? } else { rotated })
        }
        AugKind::Color { brightness, contrast } => {
            let a = if contrast > 0.0 {
                rng.random_range(1.0 - contrast..=1.0 + contrast)
            } else {
                1.0
            };
            let b = if brightness > 0.0 {
                rng.random_range(-brightness..=brightness)
            } else {
                0.0
            };
            color_jitter(image, a, b)
        }
        AugKind::Noise { sigma } => gaussian_noise(image, sigma, rng),
        AugKind::Cutout { fraction, fill } => cutout(image, fraction, fill, rng),
    }
}

/// Counter-clockwise rotation about the image centre with bilinear
/// resampling; pixels sampled from outside the frame are 0. Quarter turns of
/// square images are exact permutations.
pub fn rotate<T: Scalar>(image: &Tensor<T>, degrees: f64) -> Result<Tensor<T>> {
    let (c, h, w) = image_dims(image)?;
    if !degrees.is_finite() || degrees.abs() > 360.0 {
        return Err(Error::param("degrees", "rotation must be finite and within ±360"));
    }
    let turn = math::rem_euclid(degrees, 360.0);
    let src = image.data();
    let mut out = vec![T::zero(); src.len()];
    let quarter = [0.0, 90.0, 180.0, 270.0].iter().position(|&q| turn == q);
    match quarter {
        Some(q) if q % 2 == 0 || h == w => {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let (sx, sy) = match q {
                            0 => (x, y),
                            1 => (w - 1 - y, x),
                            2 => (w - 1 - x, h - 1 - y),
                            _ => (y, h - 1 - x),
                        };
                        out[(ch * h + y) * w + x] = src[(ch * h + sy) * w + sx];
                    }
                }
            }
        }
        _ => {
            let theta = degrees * (core::f64::consts::PI / 180.0);
            let (sin, cos) = math::sin_cos(theta);
            let cx = (w as f64 - 1.0) / 2.0;
            let cy = (h as f64 - 1.0) / 2.0;
            for y in 0..h {
                for x in 0..w {
                    let dx = x as f64 - cx;
                    let dy = y as f64 - cy;
                    let sx = cx + cos * dx - sin * dy;
                    let sy = cy + sin * dx + cos * dy;
                    let x0 = math::floor(sx);
                    let y0 = math::floor(sy);
                    let (fx, fy) = (sx - x0, sy - y0);
                    let taps = [
                        (x0, y0, (1.0 - fx) * (1.0 - fy)),
                        (x0 + 1.0, y0, fx * (1.0 - fy)),
                        (x0, y0 + 1.0, (1.0 - fx) * fy),
                        (x0 + 1.0, y0 + 1.0, fx * fy),
                    ];
                    for ch in 0..c {
                        let mut acc = 0.0;
                        for &(tx, ty, weight) in &taps {
                            if weight == 0.0 || tx < 0.0 || ty < 0.0 || tx >= w as f64 || ty >= h as f64 {
                                continue;
                            }
                            acc += weight * src[(ch * h + ty as usize) * w + tx as usize].as_f64();
                        }
                        out[(ch * h + y) * w + x] = clamp01(T::from_f64(acc));
                    }
                }
            }
        }
    }
    Tensor::new(image.shape(), out)
}

/// Mirrors the width axis.
pub fn hflip<T: Scalar>(image: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, w) = image_dims(image)?;
    let data = image
        .data()
        .chunks(w)
        .flat_map(|row| row.iter().rev().copied())
        .collect();
    Tensor::new(image.shape(), data)
}

/// `clamp(a·x + b)` per pixel.
pub fn color_jitter<T: Scalar>(image: &Tensor<T>, a: f64, b: f64) -> Result<Tensor<T>> {
    image_dims(image)?;
    if !a.is_finite() || !b.is_finite() || a < 0.0 {
        return Err(Error::param("color_jitter", "scale must be finite and >= 0, shift finite"));
    }
    let (a, b) = (T::from_f64(a), T::from_f64(b));
    Ok(image.map(|x| clamp01(a * x + b)))
}

/// Adds i.i.d. `N(0, sigma²)` noise and clamps.
pub fn gaussian_noise<T: Scalar>(image: &Tensor<T>, sigma: f64, rng: &mut StreamRng) -> Result<Tensor<T>> {
    image_dims(image)?;
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::param("sigma", "must be finite and >= 0"));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    Ok(image.map(|x| {
        let z: f64 = StandardNormal.sample(rng);
        clamp01(x + T::from_f64(sigma * z))
    }))
}

/// Side of the cutout square for an `h×w` image.
pub fn cutout_side(fraction: f64, h: usize, w: usize) -> usize {
    let side = math::round(math::sqrt(fraction * (h * w) as f64)) as usize;
    side.clamp(1, h.min(w))
}

/// Sets one square of area `fraction·H·W`, fully inside the frame, to `fill`.
pub fn cutout<T: Scalar>(image: &Tensor<T>, fraction: f64, fill: f64, rng: &mut StreamRng) -> Result<Tensor<T>> {
    let (c, h, w) = image_dims(image)?;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::param("fraction", "must lie in (0, 1)"));
    }
    let side = cutout_side(fraction, h, w);
    let y0 = rng.random_range(0..=h - side);
    let x0 = rng.random_range(0..=w - side);
    let mut out = image.clone();
    let fill = T::from_f64(fill);
    for ch in 0..c {
        for y in y0..y0 + side {
            let row = (ch * h + y) * w;
            out.data_mut()[row + x0..row + x0 + side].fill(fill);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
