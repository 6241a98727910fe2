//! Core algorithms for measuring how much of a classifier's attribution lands on
//! an object versus its surrounding context.
//!
//! The crate is `no_std` (it needs `alloc`) and carries no IO. It provides:
//!
//! * [`tensor`]: planar RGB rasters, binary object masks, attribution maps, bilinear
//!   resampling and the `ATTR` interchange encoding.
//! * [`engine`]: a small single-sample CNN with forward and reverse mode, including
//!   bias gradients and the guided-ReLU backward rule.
//! * [`attribution`]: GradCAM, GradCAM++, Guided Backpropagation, FullGrad and ScoreCAM.
//! * [`synthesis`]: context-manipulated variants (blacked-out, mixed backgrounds, noise
//!   backgrounds, context-restricted corruptions) that keep object pixels bit-exact.
//! * [`metrics`]: object/context volume attribution and the accuracy/attribution
//!   aggregations built on top of it.
#![no_std]

extern crate alloc;

pub mod attribution;
pub mod engine;
mod error;
pub mod metrics;
pub mod seed;
pub mod synthesis;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{AttributionMap, BinaryMask, ImageTensor};
