//! Knowledge transfer from a feature-rich teacher to a compact student through
//! stored, compressed embedding sequences, plus an exact information-theory
//! verification suite over small enumerable worlds.

pub mod compression;
pub mod error;
pub mod infotheory;
pub mod metrics;
pub mod models;
pub mod nncore;
pub mod pipeline;
pub mod quantization;
pub mod seqstore;
pub mod synthworld;

pub use error::{Error, Result};
