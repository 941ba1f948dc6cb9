//! Few-shot personalized scanpath prediction.
//!
//! Subject embeddings are learned from image/scanpath pairs with a
//! classification plus triplet objective, averaged over a handful of
//! support scanpaths into a prototype for a new subject, and fed to a
//! scanpath decoder. Predictions are scored with ScanMatch, MultiMatch and
//! string-edit distance.

pub mod data;
pub mod metrics;
pub mod error;
pub mod experiment;
pub mod numerics;
pub mod predictor;
pub mod seed;
pub mod senet;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
