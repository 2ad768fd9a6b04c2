//! Tokenization, vocabulary and the context encoder.

pub mod encoder;
pub mod tokenize;
pub mod vocab;

pub use encoder::{pool, positional_encoding, ContextMatrix, Encoder, TokenSequence};
pub use tokenize::{tokenize, tokenize_or_empty};
pub use vocab::{Vocabulary, UNK, UNK_ID};
