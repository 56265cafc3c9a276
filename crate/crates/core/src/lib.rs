//! Multilingual neural machine translation with target-language flags, and
//! tooling that reads the learned flag embeddings back out as a continuous
//! language space for distance, projection and clustering analysis.

pub mod autodiff;
pub mod corpus;
mod error;
pub mod langspace;
pub mod nmt;
pub mod synth;
pub mod trainer;
pub mod translator;

pub use error::{Error, Result};
