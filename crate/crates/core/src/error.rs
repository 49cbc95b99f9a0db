use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {op}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("label {label} out of range [0, {count})")]
    LabelOutOfRange { label: usize, count: usize },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("invalid value for `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("non-finite loss at step {step}: L_Y={class_loss}, L_D'={domain_loss}")]
    NonFiniteLoss {
        step: usize,
        class_loss: f64,
        domain_loss: f64,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}

/// Errors raised while decoding the on-disk dataset formats.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("CIFAR-10 payload of {len} bytes is not a multiple of the 3073-byte record size")]
    CifarRecordSize { len: usize },
    #[error("CIFAR-10 record {record} has label byte {label} (expected 0..=9)")]
    CifarLabel { record: usize, label: u8 },
    #[error("IDX {file} magic mismatch: expected {expected:#010x}, found {found:#010x}")]
    IdxMagic {
        file: &'static str,
        expected: u32,
        found: u32,
    },
    #[error("IDX item counts disagree: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },
    #[error("IDX {file} truncated: expected {expected} bytes, found {found}")]
    IdxTruncated {
        file: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("IDX label {label} at index {index} exceeds 9")]
    IdxLabel { index: usize, label: u8 },
}
