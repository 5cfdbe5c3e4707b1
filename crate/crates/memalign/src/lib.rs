//! Cross-modal alignment of paired face/voice embeddings through trainable
//! key-value slot memories, with a deterministic synthetic corpus, a toy
//! frame decoder trained in two phases under mixed intra/inter-speaker
//! supervision, and cosine-based homogeneity/diversity/gender metrics.

pub mod archive;
pub mod config;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod mfva;
pub mod numerics;
pub mod rng;
pub mod synth;
pub mod trainer;
pub mod util;

pub use error::{Error, Result};
