//! Tokenizer diagnostics, constrained probing datasets and lightweight
//! classifiers over precomputed contextual embeddings.

pub mod corpus;
pub mod dataset;
pub mod embstore;
pub mod error;
pub mod nn;
pub mod rng;
pub mod runner;
pub mod tokenize;

pub use error::{Error, Result};
