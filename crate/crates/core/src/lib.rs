//! Multi-intention co-click graph construction and a siamese transformer
//! retriever whose document side attends over sampled co-click neighbors.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod intent;
pub mod micg;
pub mod pipeline;
pub mod retrieval;
pub mod tape;
pub mod text;
pub mod train;

pub use error::{Error, Result};
