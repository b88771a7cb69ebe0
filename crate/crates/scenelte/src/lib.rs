//! Acoustic scene classification with label tree embeddings.
//!
//! The library reproduces a full recognition pipeline: low-level audio
//! features, confusion-driven label-tree learning, label-tree-embedding
//! (LTE) images, a chi-square kernel SVM baseline over average-pooled
//! embeddings, and 1-X pooling convolutional networks trained on
//! multi-channel LTE images.

pub mod cnn;
pub mod dsp;
pub mod embed;
pub mod error;
pub mod forest;
pub mod kernelbase;
pub mod labeltree;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
