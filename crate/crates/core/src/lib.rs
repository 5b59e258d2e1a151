//! Construction and evaluation of image-mixed multi-turn dialogue datasets.
//!
//! The pipeline runs in three stages over text dialogue corpora and captioned
//! image collections with precomputed embeddings:
//!
//! 1. [`preprocess`] picks candidate target sentences (no questions, never the
//!    first turn) and strips stop words from their query tokens.
//! 2. [`simsearch`] finds the exact top-k images per candidate by cosine
//!    similarity and [`builder`] expands each match into its own instance.
//! 3. [`calibrate`] turns human scores on similarity-segmented samples into
//!    per-combination thresholds and filters instances with them.
//!
//! [`evalharness`] measures the result with a tf-idf retrieval baseline.

pub mod builder;
pub mod calibrate;
pub mod corpus;
pub mod error;
pub mod evalharness;
pub mod jsonl;
pub mod preprocess;
pub mod simsearch;

pub use builder::{Combination, DatasetStats, Instance};
pub use corpus::{Dialogue, EmbeddingStore, ImageRecord, Split, Turn};
pub use error::{Error, Result};
