//! Core library for measuring answer quality in question-and-answer corpora.
//!
//! A shared sentence encoder embeds questions and answers; training with
//! in-batch negatives teaches it to recognize each question's true answer,
//! and the cosine similarity between the two embeddings becomes the quality
//! score of the exchange. The crate also carries the evaluation (truncated
//! mean reciprocal rank, hit rates) and statistical machinery (null
//! distributions, Welch tests, group means) used to analyze the scores.

pub mod analysis;
pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod scoring;
pub mod synthetic;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use corpus::{CorpusSplit, Exchange, Party, ReplyLabel, Role};
pub use encoder::{EncoderConfig, EncoderParams};
pub use error::{Error, Result};
pub use scoring::{RankResult, ScoredPair};
pub use tensor::Tensor;
pub use tokenizer::{TokenSequence, Vocabulary};
pub use training::{Anchor, TrainConfig, TrainReport};
