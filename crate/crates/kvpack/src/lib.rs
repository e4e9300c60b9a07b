//! Knowledge packs: pre-computed KV caches for a small deterministic
//! decoder-only transformer.
//!
//! The crate is organized around one idea: for a causal transformer, the KV
//! cache computed over a text `F` alone is identical to the `F`-prefix of the
//! cache computed over `F` followed by anything else. That makes a saved
//! cache a drop-in replacement for putting `F` in the prompt. Everything here
//! serves that property or exploits it:
//!
//! - [`model`] — the deterministic toy transformer, byte tokenizer, and chat
//!   template dialects that every other module treats as ground truth.
//! - [`kv`] — the [`KvCache`](kv::KvCache) value type, slicing and comparison
//!   utilities, and the bit-exact pack file format.
//! - [`pipeline`] — the write phase (build a pack from facts), the read phase
//!   (answer a query at zero fact-token cost), and cache composition.
//! - [`steering`] — contrastive value-space deltas applied to cached values
//!   while keys stay untouched.
//! - [`routing`] — deterministic text embeddings, k-means banks, and lazy
//!   cache recompute for scaling past a single pack.
//! - [`verify`] — equivalence checking, template-split linting, token-cost
//!   accounting, and answer metrics.

pub mod kv;
pub mod model;
pub mod pipeline;
pub mod routing;
pub mod steering;
pub mod verify;

mod hash;

pub use kv::{caches_equal, CacheComparison, KnowledgePack, KvCache};
pub use model::{
    ChatTemplate, Fingerprint, Model, ModelConfig, Role, SpecialTokens, TemplateSet, TokenId,
};
pub use pipeline::{build_pack, query_with_pack, BuildRequest, QueryOutput, TokenAccounting};
pub use steering::{LayerRange, SteeringDelta};
pub use routing::{BankIndex, EmbeddingVector};
