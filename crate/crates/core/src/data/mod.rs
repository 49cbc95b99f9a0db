//! In-memory datasets, batching, and the dataset sources: CIFAR-10 binary
//! records, MNIST IDX files, Gaussian synthetic data and object fixtures.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

pub mod cifar;
pub mod mnist;
pub mod objects;
pub mod synthetic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Split {
    Train,
    Test,
}

/// `N×C×H×W` images in `[0, 1]` with aligned class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    images: Tensor<T>,
    labels: Vec<usize>,
    class_count: usize,
    split: Split,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, class_count: usize, split: Split) -> Result<Self> {
        if images.rank() != 4 || images.shape()[0] == 0 {
            return Err(Error::InvalidShape {
                op: "dataset",
                shape: images.shape().to_vec(),
                reason: "images must be N×C×H×W with N > 0".into(),
            });
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::param(
                "labels",
                format!("{} labels for {} images", labels.len(), images.shape()[0]),
            ));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::LabelOutOfRange {
                label,
                count: class_count,
            });
        }
        if images.data().iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
            return Err(Error::param("images", "pixel values must lie in [0, 1]"));
        }
        Ok(Dataset {
            images,
            labels,
            class_count,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]`.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn images(&self) -> &Tensor<T> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn image(&self, index: usize) -> Tensor<T> {
        self.images.index_outer(index)
    }

    /// Stacks the listed images into an `n×C×H×W` batch.
    pub fn gather(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let stride: usize = self.image_shape().iter().product();
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * stride..(i + 1) * stride]);
        }
        let [c, h, w] = self.image_shape();
        let images = Tensor::from_parts(alloc::vec![indices.len(), c, h, w], data);
        (images, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::param("indices", format!("index {bad} out of range for {} samples", self.len())));
        }
        let (images, labels) = self.gather(indices);
        Dataset::new(images, labels, self.class_count, self.split)
    }

    /// The first `n` samples after a shuffle keyed by `seed`.
    pub fn seeded_subset(&self, n: usize, seed: u64) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::param(
                "subset",
                format!("size {n} outside [1, {}]", self.len()),
            ));
        }
        let split_key = match self.split {
            Split::Train => 0,
            Split::Test => 1,
        };
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::stream(seed, rng::SUBSET, split_key, 0));
        order.truncate(n);
        self.select(&order)
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            images: self.images.cast(),
            labels: self.labels.clone(),
            class_count: self.class_count,
            split: self.split,
        }
    }
}

/// Index batches for one epoch. The order is a permutation keyed by
/// `(seed, epoch)`; the last batch may be short.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 || batch_size > n {
        return Err(Error::param(
            "batch_size",
            format!("{batch_size} outside [1, {n}]"),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, rng::SHUFFLE, epoch, 0));
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}
