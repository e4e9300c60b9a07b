//! The KV cache value type, comparison and slicing utilities, and the
//! bit-exact knowledge-pack serialization format.

mod cache;
mod compare;
pub mod format;
mod pack;

pub use cache::KvCache;
pub use compare::{caches_equal, CacheComparison, LayerDiff};
pub use format::FormatError;
pub use pack::KnowledgePack;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KvError {
    #[error("slice length {t} exceeds cache length {len}")]
    SliceOutOfRange { t: usize, len: usize },
    #[error("layer tensors must hold {expected} floats, got K {got_k} / V {got_v}")]
    BadLayerData {
        expected: usize,
        got_k: usize,
        got_v: usize,
    },
}
