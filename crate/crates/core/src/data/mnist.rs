//! MNIST IDX files: big-endian `u32` magic and dimensions, then bytes.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{FormatError, Result};
use crate::tensor::{Scalar, Tensor};

use super::{Dataset, Split};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

const IMAGES: &str = "images";
const LABELS: &str = "labels";

fn header(bytes: &[u8], file: &'static str, words: usize) -> Result<Vec<u32>, FormatError> {
    if bytes.len() < 4 * words {
        return Err(FormatError::IdxTruncated {
            file,
            expected: 4 * words,
            found: bytes.len(),
        });
    }
    Ok(bytes[..4 * words]
        .chunks_exact(4)
        .map(|w| u32::from_be_bytes([w[0], w[1], w[2], w[3]]))
        .collect())
}

fn check_magic(found: u32, expected: u32, file: &'static str) -> Result<(), FormatError> {
    if found != expected {
        return Err(FormatError::IdxMagic { file, expected, found });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], file: &'static str, offset: usize, len: usize) -> Result<&'a [u8], FormatError> {
    if bytes.len() != offset + len {
        return Err(FormatError::IdxTruncated {
            file,
            expected: offset + len,
            found: bytes.len(),
        });
    }
    Ok(&bytes[offset..])
}

/// Parsed image file: `(count, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8]), FormatError> {
    let h = header(bytes, IMAGES, 1)?;
    check_magic(h[0], IMAGE_MAGIC, IMAGES)?;
    let h = header(bytes, IMAGES, 4)?;
    let (n, rows, cols) = (h[1] as usize, h[2] as usize, h[3] as usize);
    Ok((n, rows, cols, payload(bytes, IMAGES, 16, n * rows * cols)?))
}

pub fn parse_labels(bytes: &[u8]) -> Result<&[u8], FormatError> {
    let h = header(bytes, LABELS, 1)?;
    check_magic(h[0], LABEL_MAGIC, LABELS)?;
    let h = header(bytes, LABELS, 2)?;
    let labels = payload(bytes, LABELS, 8, h[1] as usize)?;
    if let Some(index) = labels.iter().position(|&l| l > 9) {
        return Err(FormatError::IdxLabel {
            index,
            label: labels[index],
        });
    }
    Ok(labels)
}

/// Builds an `N×1×rows×cols` dataset from an image file and a label file.
pub fn load<T: Scalar>(image_bytes: &[u8], label_bytes: &[u8], split: Split) -> Result<Dataset<T>> {
    let (n, rows, cols, pixels) = parse_images(image_bytes)?;
    let labels = parse_labels(label_bytes)?;
    if labels.len() != n {
        return Err(FormatError::IdxCountMismatch {
            images: n,
            labels: labels.len(),
        }
        .into());
    }
    let scale = T::from_f64(255.0);
    let data = pixels.iter().map(|&b| T::from_usize(b as usize) / scale).collect();
    Dataset::new(
        Tensor::new(&[n, 1, rows, cols], data)?,
        labels.iter().map(|&l| l as usize).collect(),
        10,
        split,
    )
}

pub fn encode_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols).max(1);
    let mut out = vec![];
    for word in [IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = vec![];
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
