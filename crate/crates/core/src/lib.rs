//! Tensors, a define-by-run reverse-mode tape, and the pieces needed to train
//! a two-headed classifier with adversarial domain-label augmentation.
//!
//! Augmented samples are partitioned into subdomains by the augmentation
//! family that produced them. A domain classifier sits behind a gradient
//! reversal layer on top of the shared feature extractor, so one backward
//! pass descends the class loss everywhere, descends the domain loss in the
//! domain head, and ascends it (scaled by the DArate `λ`) in the extractor.
//!
//! The crate is `no_std` + `alloc`. File IO, config parsing and the command
//! line live in the `adlda` companion crate.

#![no_std]

extern crate alloc;
#[cfg(any(feature = "std", test))]
extern crate std;

pub mod augment;
pub mod autodiff;
pub mod cam;
pub mod data;
mod error;
mod math;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod rng;
mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, FormatError, Result};
pub use tensor::{Scalar, Tensor};
