//! Siamese multi-scale embedding networks trained with contrastive loss and
//! curriculum-ordered online pair mining, plus exact L2 retrieval over the
//! learned embeddings.

pub mod config;
pub mod dataio;
pub mod error;
pub mod gradcheck;
pub mod index;
pub mod loss;
pub mod multiscale;
pub mod network;
pub mod numerics;
pub mod pairs;
pub mod trainer;

pub use error::{Error, Result};
