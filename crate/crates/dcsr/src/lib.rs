//! Sentence-granular dense retrieval engine.
//!
//! The pipeline: datasets of (question, positive passages, BM25-negative
//! passages) are segmented into sentences, a bi-encoder is trained with a
//! softmax contrastive objective over in-batch and hard negatives, every
//! sentence of the corpus is indexed as its own vector, and at query time
//! retrieved sentence scores are softmax-normalized and aggregated per
//! passage with a noisy-OR rule to rank passages by the probability that
//! they contain the answer.

pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod index;
pub mod retrieval;
pub mod sampler;
pub mod scalar;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type used for training and checkpoint storage.
pub type TrainFloat = f64;
/// Scalar type used for index vector storage and search.
pub type IndexFloat = f32;
