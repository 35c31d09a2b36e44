//! Contrastive fusion of per-modality artist embeddings into one shared
//! space, linear multimodal baselines, and the retrieval evaluation suite
//! used to compare them.

pub mod baselines;
pub mod contrastive;
pub mod data;
pub mod embedding;
pub mod encoders;
pub mod error;
pub mod experiment;
pub mod eval;
pub mod numerics;
pub mod rng;
pub mod sources;
pub mod synthetic;

pub use error::{Error, Result};
