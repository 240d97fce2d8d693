//! Verse-suggestion toolkit: corpus handling, sentiment classification,
//! style transfer, bias-aware augmentation, subword tokenization, dual-encoder
//! retrieval and bias evaluation.

pub mod augment;
pub mod bias_eval;
pub mod corpus;
pub mod error;
pub mod retriever;
pub mod sentiment;
pub mod styletransfer;
pub mod synth;
pub mod text;
pub mod tokenizer;

pub use error::{Error, Result};
