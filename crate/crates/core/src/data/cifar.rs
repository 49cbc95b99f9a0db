//! CIFAR-10 binary batches: 3073-byte records, one label byte followed by
//! the red, green and blue 32×32 planes.

use alloc::vec::Vec;

use crate::error::{FormatError, Result};
use crate::tensor::{Scalar, Tensor};

use super::{Dataset, Split};

pub const SIDE: usize = 32;
pub const PIXELS: usize = 3 * SIDE * SIDE;
pub const RECORD_SIZE: usize = PIXELS + 1;
pub const CLASS_COUNT: usize = 10;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

/// Raw bytes of a batch file, split into labels and pixel planes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CifarRecords {
    pub labels: Vec<u8>,
    /// `PIXELS` bytes per record.
    pub pixels: Vec<u8>,
}

impl CifarRecords {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn extend(&mut self, other: CifarRecords) {
        self.labels.extend(other.labels);
        self.pixels.extend(other.pixels);
    }

    pub fn to_dataset<T: Scalar>(&self, split: Split) -> Result<Dataset<T>> {
        let scale = T::from_f64(255.0);
        let data = self.pixels.iter().map(|&b| T::from_usize(b as usize) / scale).collect();
        let images = Tensor::new(&[self.len(), 3, SIDE, SIDE], data)?;
        Dataset::new(
            images,
            self.labels.iter().map(|&l| l as usize).collect(),
            CLASS_COUNT,
            split,
        )
    }

    /// Inverse of [`CifarRecords::to_dataset`] for 3×32×32 datasets; pixels
    /// are rounded back to the nearest byte.
    pub fn from_dataset<T: Scalar>(dataset: &Dataset<T>) -> Result<Self> {
        if dataset.image_shape() != [3, SIDE, SIDE] || dataset.class_count() > CLASS_COUNT {
            return Err(crate::Error::InvalidShape {
                op: "cifar_serialize",
                shape: dataset.images().shape().to_vec(),
                reason: "expected 3×32×32 images with at most 10 classes".into(),
            });
        }
        Ok(CifarRecords {
            labels: dataset.labels().iter().map(|&l| l as u8).collect(),
            pixels: dataset
                .images()
                .data()
                .iter()
                .map(|v| crate::math::round(v.as_f64() * 255.0) as u8)
                .collect(),
        })
    }
}

pub fn parse(bytes: &[u8]) -> Result<CifarRecords, FormatError> {
    if bytes.len() % RECORD_SIZE != 0 {
        return Err(FormatError::CifarRecordSize { len: bytes.len() });
    }
    let n = bytes.len() / RECORD_SIZE;
    let mut records = CifarRecords {
        labels: Vec::with_capacity(n),
        pixels: Vec::with_capacity(n * PIXELS),
    };
    for (record, chunk) in bytes.chunks_exact(RECORD_SIZE).enumerate() {
        let label = chunk[0];
        if label as usize >= CLASS_COUNT {
            return Err(FormatError::CifarLabel { record, label });
        }
        records.labels.push(label);
        records.pixels.extend_from_slice(&chunk[1..]);
    }
    Ok(records)
}

pub fn serialize(records: &CifarRecords) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * RECORD_SIZE);
    for (label, pixels) in records.labels.iter().zip(records.pixels.chunks_exact(PIXELS)) {
        out.push(*label);
        out.extend_from_slice(pixels);
    }
    out
}
