//! Neural locality-sensitive hashing for entity-resolution blocking.
//!
//! The pipeline: ingest two same-schema tables with labeled match pairs,
//! serialize records to token sequences, train a small encoder plus a
//! scalar projection head with a clamp-based triplet loss, then generate
//! candidate pairs by k-nearest-neighbor search over the learned
//! embeddings. A MinHash-banding baseline and an evaluation harness are
//! included for head-to-head comparisons.

pub mod augment;
pub mod blocking;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod harness;
pub mod losses;
pub mod minhash;
pub mod trainer;

mod error;
mod hashing;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
