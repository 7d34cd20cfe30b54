//! Intra- and inter-frame coding of binary local features and
//! Bag-of-Visual-Words global descriptors extracted from video, with the
//! evaluation harness used to measure rate against task accuracy.

pub mod boosting;
pub mod bovw;
pub mod codebook;
pub mod entropy;
pub mod error;
pub mod eval;
pub mod feature;
mod io;
pub mod local;
pub mod par;

pub use error::{Error, Result};
