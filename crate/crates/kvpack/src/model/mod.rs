//! The deterministic toy decoder-only transformer and its text machinery.
//!
//! A [`Model`] is fully determined by its [`ModelConfig`]: weights come from
//! a seeded ChaCha20 stream, decoding is greedy with pinned tie-breaking, and
//! every reduction runs in a fixed sequential order. Two runs with the same
//! config and inputs agree bit for bit, which is what lets the rest of the
//! crate make exact-equality claims about caches.

mod config;
mod forward;
mod rope;
mod template;
mod tokenizer;
mod weights;

pub use config::{Fingerprint, ModelConfig};
pub use forward::{ForwardOutput, Model};
pub use rope::rope_rotate;
pub use template::{ChatTemplate, ConversationRender, Role, RoleFrame, TemplateSet};
pub use tokenizer::{detokenize, tokenize, SpecialTokens, TokenId};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("d_head must be even for rotary pairs, got {0}")]
    OddHeadDim(usize),
    #[error("d_model ({d_model}) must equal n_heads ({n_heads}) * d_head ({d_head})")]
    DimMismatch {
        d_model: usize,
        n_heads: usize,
        d_head: usize,
    },
    #[error("vocab_size {vocab} too small: need at least 256 + {specials} special tokens")]
    VocabTooSmall { vocab: usize, specials: usize },
    #[error("config field {0} must be nonzero")]
    ZeroField(&'static str),
    #[error("vector length {got} does not match d_head {expected}")]
    VectorLength { got: usize, expected: usize },
    #[error("token id {0} out of range for vocab size {1}")]
    TokenOutOfRange(u32, usize),
    #[error("cache fingerprint {cache} does not match model fingerprint {model}")]
    FingerprintMismatch {
        cache: Fingerprint,
        model: Fingerprint,
    },
    #[error("position overflow: offset {offset} + {len} tokens exceeds max_position {max}")]
    PositionOverflow {
        offset: usize,
        len: usize,
        max: usize,
    },
    #[error("cache shape does not match model ({0})")]
    CacheShape(String),
    #[error("cannot decode from an empty prompt with no logits to extend")]
    EmptyPrompt,
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("unknown role: {0}")]
    UnknownRole(String),
    #[error("unknown template dialect: {0}")]
    UnknownDialect(String),
    #[error("duplicate template dialect: {0}")]
    DuplicateDialect(String),
    #[error("template definition line {line}: {msg}")]
    Definition { line: usize, msg: String },
}
