//! Polyglot named-entity recognition with byte/character-level neural CRF
//! taggers, plus the analysis tools used to study them: magnitude pruning,
//! empirical Fisher importance overlap and cross-language error forensics.

pub mod analysis;
pub mod bts_codec;
pub mod corpus;
pub mod crf;
pub mod encoding;
pub mod error;
pub mod evaluation;
pub mod numerics;
pub mod syncorpus;
pub mod taggers;
pub mod training;

pub use error::{Error, Result};
