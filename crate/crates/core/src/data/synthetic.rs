//! Class-conditional Gaussian data rendered as single-channel images.
//!
//! A sample of class `c` is `x = μ_c + L_c z` with `z ~ N(0, I)` in
//! `D = side²` dimensions; pixel `j` is `clamp(offset + scale·x_j)`. Train
//! and test splits come from the same distribution.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math;
use crate::rng;
use crate::tensor::{Scalar, Tensor};

use super::{Dataset, Split};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(default, deny_unknown_fields)
)]
pub struct SyntheticSpec {
    /// Images are `1×side×side`.
    pub side: usize,
    pub class_count: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// One mean per class, each of length `side²`. When empty, class `c`
    /// gets `±separation` on axis `c / 2`, positive for even `c`.
    pub means: Vec<Vec<f64>>,
    pub separation: f64,
    /// Row-major `D×D` covariances: none (identity), one shared, or one per
    /// class.
    pub covariances: Vec<Vec<f64>>,
    pub pixel_scale: f64,
    pub pixel_offset: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            side: 4,
            class_count: 2,
            train_size: 256,
            test_size: 2048,
            means: Vec::new(),
            separation: 3.0,
            covariances: Vec::new(),
            pixel_scale: 0.1,
            pixel_offset: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn dim(&self) -> usize {
        self.side * self.side
    }

    pub fn resolved_means(&self) -> Result<Vec<Vec<f64>>> {
        let d = self.dim();
        if !self.means.is_empty() {
            if self.means.len() != self.class_count || self.means.iter().any(|m| m.len() != d) {
                return Err(Error::param(
                    "means",
                    format!("expected {} means of length {d}", self.class_count),
                ));
            }
            return Ok(self.means.clone());
        }
        if self.class_count > 2 * d {
            return Err(Error::param("class_count", "too many classes for generated means"));
        }
        Ok((0..self.class_count)
            .map(|c| {
                let mut m = vec![0.0; d];
                if self.class_count > 1 {
                    m[c / 2] = if c % 2 == 0 { self.separation } else { -self.separation };
                }
                m
            })
            .collect())
    }

    /// Cholesky factors, one per class.
    fn factors(&self) -> Result<Vec<Vec<f64>>> {
        let d = self.dim();
        let mut identity = vec![0.0; d * d];
        for i in 0..d {
            identity[i * d + i] = 1.0;
        }
        let covs = match self.covariances.len() {
            0 => vec![identity; self.class_count],
            1 => vec![self.covariances[0].clone(); self.class_count],
            n if n == self.class_count => self.covariances.clone(),
            n => {
                return Err(Error::param(
                    "covariances",
                    format!("expected 0, 1 or {} matrices, got {n}", self.class_count),
                ))
            }
        };
        covs.iter().map(|c| cholesky(c, d)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.side == 0 || self.class_count == 0 || self.train_size == 0 || self.test_size == 0 {
            return Err(Error::param("synthetic", "side, class_count and split sizes must be positive"));
        }
        if !(self.pixel_scale.is_finite() && self.pixel_scale > 0.0 && self.pixel_offset.is_finite()) {
            return Err(Error::param("pixel_scale", "must be finite and positive"));
        }
        let means = self.resolved_means()?;
        for i in 0..means.len() {
            for j in 0..i {
                if means[i] == means[j] {
                    return Err(Error::param("means", format!("classes {j} and {i} share a mean")));
                }
            }
        }
        self.factors().map(|_| ())
    }
}

/// Lower-triangular `L` with `L Lᵀ = a`; fails unless `a` is symmetric
/// positive definite.
pub fn cholesky(a: &[f64], d: usize) -> Result<Vec<f64>> {
    if a.len() != d * d {
        return Err(Error::param("covariance", format!("expected {} entries, got {}", d * d, a.len())));
    }
    for i in 0..d {
        for j in 0..i {
            let (x, y) = (a[i * d + j], a[j * d + i]);
            if (x - y).abs() > 1e-12 * (1.0 + x.abs().max(y.abs())) {
                return Err(Error::param("covariance", "matrix is not symmetric"));
            }
        }
    }
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let dot: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
            if i == j {
                let pivot = a[i * d + i] - dot;
                if !(pivot > 0.0) || !pivot.is_finite() {
                    return Err(Error::param("covariance", "matrix is not positive definite"));
                }
                l[i * d + i] = math::sqrt(pivot);
            } else {
                l[i * d + j] = (a[i * d + j] - dot) / l[j * d + j];
            }
        }
    }
    Ok(l)
}

fn sample_split<T: Scalar>(spec: &SyntheticSpec, means: &[Vec<f64>], factors: &[Vec<f64>], split: Split) -> Result<Dataset<T>> {
    let (n, key) = match split {
        Split::Train => (spec.train_size, 0),
        Split::Test => (spec.test_size, 1),
    };
    let d = spec.dim();
    let mut r = rng::stream(spec.seed, rng::SYNTHETIC, key, 0);
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut z = vec![0.0; d];
    for i in 0..n {
        let c = i % spec.class_count;
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut r);
        }
        let l = &factors[c];
        for row in 0..d {
            let x = means[c][row] + (0..=row).map(|k| l[row * d + k] * z[k]).sum::<f64>();
            let pixel = (spec.pixel_offset + spec.pixel_scale * x).clamp(0.0, 1.0);
            data.push(T::from_f64(pixel));
        }
        labels.push(c);
    }
    Dataset::new(Tensor::new(&[n, 1, spec.side, spec.side], data)?, labels, spec.class_count, split)
}

/// Draws the train and test splits.
pub fn make<T: Scalar>(spec: &SyntheticSpec) -> Result<(Dataset<T>, Dataset<T>)> {
    spec.validate()?;
    let means = spec.resolved_means()?;
    let factors = spec.factors()?;
    Ok((
        sample_split(spec, &means, &factors, Split::Train)?,
        sample_split(spec, &means, &factors, Split::Test)?,
    ))
}
