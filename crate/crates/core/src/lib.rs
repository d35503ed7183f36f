//! Explain generated code by pointing at the training examples whose
//! inference fingerprints are closest to the generation's.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod fingerprint;
pub mod index;
pub mod model;
pub mod pairing;
pub mod pipeline;
pub mod recitation;
pub mod tokenizer;

pub use error::{Error, Result};
