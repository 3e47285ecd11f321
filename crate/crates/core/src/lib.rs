pub mod adapter;
pub mod config;
pub mod aligner;
pub mod corpus;
pub mod dense;
pub mod digest;
pub mod embedding;
pub mod error;
pub mod evaluator;
pub mod fusion;
pub mod http;
pub mod hypothesizer;
pub mod jsonl;
pub mod llm;
pub mod pipeline;
pub mod ranked;
pub mod sparse;
pub mod trainer;

pub use error::{Error, Result};
