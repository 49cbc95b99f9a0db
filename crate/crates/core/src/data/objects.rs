//! Images with one object at a known position, for attribution checks.
//!
//! Class 0 is a filled square, class 1 a plus sign, class 2 a hollow
//! square; each is drawn in every channel over low-amplitude background
//! noise.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

use super::{Dataset, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundingBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl BoundingBox {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(default, deny_unknown_fields)
)]
pub struct ObjectsSpec {
    pub channels: usize,
    pub side: usize,
    /// 1 to 3 shape classes.
    pub class_count: usize,
    pub object_size: usize,
    pub background: f64,
    pub foreground: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for ObjectsSpec {
    fn default() -> Self {
        ObjectsSpec {
            channels: 3,
            side: 16,
            class_count: 2,
            object_size: 6,
            background: 0.3,
            foreground: 0.9,
            train_size: 512,
            test_size: 128,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSet<T> {
    pub dataset: Dataset<T>,
    pub boxes: Vec<BoundingBox>,
}

fn in_shape(class: usize, size: usize, dy: usize, dx: usize) -> bool {
    let mid = size / 2;
    match class {
        0 => true,
        1 => dy == mid || dx == mid || (size % 2 == 0 && (dy == mid - 1 || dx == mid - 1)),
        _ => dy == 0 || dx == 0 || dy + 1 == size || dx + 1 == size,
    }
}

impl ObjectsSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.train_size == 0 || self.test_size == 0 {
            return Err(Error::param("objects", "channels and split sizes must be positive"));
        }
        if !(1..=3).contains(&self.class_count) {
            return Err(Error::param("class_count", "must lie in [1, 3]"));
        }
        if self.object_size < 3 || self.object_size > self.side {
            return Err(Error::param("object_size", "must lie in [3, side]"));
        }
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        if !ok(self.background) || !ok(self.foreground) {
            return Err(Error::param("objects", "intensities must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn make<T: Scalar>(&self, split: Split) -> Result<ObjectSet<T>> {
        self.validate()?;
        let (n, key) = match split {
            Split::Train => (self.train_size, 0),
            Split::Test => (self.test_size, 1),
        };
        let (c, s, size) = (self.channels, self.side, self.object_size);
        let mut r = rng::stream(self.seed, rng::SYNTHETIC, 2 + key, 0);
        let mut data = Vec::with_capacity(n * c * s * s);
        let mut labels = Vec::with_capacity(n);
        let mut boxes = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % self.class_count;
            let bbox = BoundingBox {
                top: r.random_range(0..=s - size),
                left: r.random_range(0..=s - size),
                height: size,
                width: size,
            };
            for _ in 0..c {
                for y in 0..s {
                    for x in 0..s {
                        let inside = bbox.contains(y, x) && in_shape(class, size, y - bbox.top, x - bbox.left);
                        let v = if inside {
                            self.foreground
                        } else {
                            r.random_range(0.0..=self.background)
                        };
                        data.push(T::from_f64(v));
                    }
                }
            }
            labels.push(class);
            boxes.push(bbox);
        }
        Ok(ObjectSet {
            dataset: Dataset::new(Tensor::new(&[n, c, s, s], data)?, labels, self.class_count, split)?,
            boxes,
        })
    }
}
