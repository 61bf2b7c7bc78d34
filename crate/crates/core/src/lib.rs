//! Mask-free neuron concept annotation.
//!
//! The pipeline works on precomputed artifacts: per-layer activation matrices
//! over a probing image set, and vision-language embeddings of those images, of
//! a concept vocabulary, of class labels and of a neutral base template. For each
//! neuron it selects representative images with an activation-range threshold,
//! scores every concept by template-corrected cosine similarity, and attaches the
//! concepts scoring within a ratio of the best one. An evaluation harness
//! compares final-layer annotations against class labels.

pub mod annotate;
pub mod concepts;
pub mod error;
pub mod evaluate;
pub mod fixture;
pub mod select;
pub mod stats;
pub mod tensor_io;

pub use error::{Category, Error, Result};
