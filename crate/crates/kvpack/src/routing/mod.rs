//! Banked fact routing: deterministic text embeddings, k-means bank
//! construction, nearest-centroid query routing, within-bank ranking, and
//! lazy cache recompute.
//!
//! The index stores only fact texts and embeddings — under a kilobyte per
//! fact — and rebuilds the top fact's cache on demand at query time.

mod embed;
mod index;
mod kmeans;

pub use embed::{embed_text, EmbeddingVector, EMBED_DIM};
pub use index::{BankIndex, RouteResult};
pub use kmeans::{kmeans, KmeansResult};

use std::time::Instant;

use thiserror::Error;

use crate::model::{Model, TemplateSet};
use crate::pipeline::{build_pack, query_with_pack, BuildRequest, PipelineError, QueryOutput};

#[derive(Debug, Error)]
pub enum RouteError {
    #[error("fact list is empty")]
    NoFacts,
    #[error("k = {k} out of range for {n} vectors")]
    BadK { k: usize, n: usize },
    #[error("top_m must be at least 1")]
    BadTopM,
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Routed answer with the lazy-recompute timing and storage accounting.
#[derive(Debug, Clone)]
pub struct BankAnswer {
    pub route: RouteResult,
    pub top_fact: String,
    pub output: QueryOutput,
    /// Milliseconds spent rebuilding the top fact's cache.
    pub recompute_ms: f64,
    /// Serialized index bytes divided by fact count.
    pub storage_bytes_per_fact: f64,
}

/// Route the query, rebuild the top fact's cache on the fly, and run the
/// read phase against it.
pub fn answer_via_banks(
    index: &BankIndex,
    query: &str,
    dialect: &str,
    max_new: usize,
    model: &Model,
    templates: &TemplateSet,
) -> Result<BankAnswer, RouteError> {
    let route = index.route(query, 1)?;
    let fact_id = route.ranked[0].0 as usize;
    let top_fact = index.facts()[fact_id].clone();

    let started = Instant::now();
    let req = BuildRequest::templated(vec![top_fact.clone()], dialect);
    let pack = build_pack(&req, model, templates)?;
    let recompute_ms = started.elapsed().as_secs_f64() * 1000.0;

    let output = query_with_pack(&pack, query, max_new, model, templates)?;
    let storage_bytes_per_fact = index.to_bytes().len() as f64 / index.facts().len() as f64;
    Ok(BankAnswer {
        route,
        top_fact,
        output,
        recompute_ms,
        storage_bytes_per_fact,
    })
}
