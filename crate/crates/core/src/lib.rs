//! Smoke detection by deep saliency: pixel-level saliency network with
//! recurrent refinement, objectness priors, SLIC region aggregation,
//! synthetic data augmentation and evaluation.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod image;
pub mod net;
pub mod objectness;
pub mod superpixel;
pub mod train;

pub use error::{Error, ErrorKind, Result};
