//! Entity-centric multimodal long-term memory with a search/answer control loop.
pub mod adapters;
pub mod control;
pub mod embedding;
pub mod error;
pub mod graph;
pub mod harness;
pub mod identity;
pub mod memorize;
pub mod retrieval;
pub mod rl;
pub use error::{Error, Result};
