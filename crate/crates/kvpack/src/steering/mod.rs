//! Contrastive value-space steering.
//!
//! A [`SteeringDelta`] is the per-layer difference between the cached values
//! of matched good/bad example pairs. Applying it nudges a cache's values by
//! `alpha * delta` over a layer range while keys stay untouched — keys carry
//! position rotations, so arithmetic on them scrambles attention, while
//! values tolerate it.
//!
//! Application is exact in the algebraic sense: a steered cache keeps a
//! ledger of (delta, alpha, range) terms over its original values and
//! re-materializes through one pinned accumulation. Applying a delta twice
//! therefore equals applying it once with the summed alpha, and applying a
//! composed delta equals applying its terms in sequence, bit for bit.

mod delta;
mod range;

pub use delta::SteeringDelta;
pub use range::LayerRange;

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::kv::KvCache;
use crate::model::{Model, TemplateSet};
use crate::pipeline::{self, PipelineError, QueryOutput};

#[derive(Debug, Error)]
pub enum SteerError {
    #[error("good and bad example lists must be non-empty")]
    EmptyExamples,
    #[error("example count mismatch: {good} good vs {bad} bad")]
    CountMismatch { good: usize, bad: usize },
    #[error("fingerprint mismatch: delta {delta}, target {target}")]
    FingerprintMismatch { delta: String, target: String },
    #[error("layer range not covered by delta: missing layers {0:?}")]
    RangeNotCovered(Vec<usize>),
    #[error("layer index {index} out of range for {n_layers}-layer model")]
    LayerOutOfRange { index: usize, n_layers: usize },
    #[error("cannot parse layer range `{0}`")]
    BadRange(String),
    #[error("cannot compose an empty delta list")]
    EmptyComposition,
    #[error("deltas share no layers")]
    NoSharedLayers,
    #[error("delta shape {0} does not match target")]
    ShapeMismatch(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

type DeltaTensors = Arc<BTreeMap<usize, Vec<f32>>>;

/// One applied steering term in a cache's ledger.
#[derive(Debug, Clone)]
pub(crate) struct SteerTerm {
    delta_id: u64,
    alpha: f32,
    /// Resolved layer indices this application covers, sorted.
    layers: Vec<usize>,
    delta_len: usize,
    values: DeltaTensors,
}

/// Deferred steering state: the values the cache had before any steering,
/// plus the applied terms. Materialization folds the terms in application
/// order with same-delta terms collapsed by summing alphas, so every
/// algebraically equal route produces the same floats.
#[derive(Debug, Clone)]
pub struct SteerState {
    base_v: Vec<Vec<f32>>,
    terms: Vec<SteerTerm>,
}

/// Accumulate `sum_k alpha_k * tensor_k[row]` for one row. The first part
/// initializes the accumulator (no spurious `+ 0.0`), later parts add in
/// order. [`compose_deltas`] and ledger materialization both run through
/// here, which is what makes them interchangeable bit for bit.
fn accumulate_row(parts: &[(f32, &[f32])], row: usize, width: usize) -> Vec<f32> {
    let (alpha0, t0) = parts[0];
    let mut acc: Vec<f32> = (0..width).map(|i| alpha0 * t0[row * width + i]).collect();
    for &(alpha, tensor) in &parts[1..] {
        for (i, a) in acc.iter_mut().enumerate() {
            *a += alpha * tensor[row * width + i];
        }
    }
    acc
}

fn materialize(cache: &mut KvCache) {
    let Some(state) = cache.steer().cloned() else {
        return;
    };
    let width = cache.row_width();
    let len = cache.len();
    for layer in 0..cache.n_layers() {
        // Collapse this layer's terms: same delta id keeps its first slot
        // and sums alphas in encounter order; exact zeros drop out so an
        // alpha of 0.0 (or a cancelled pair) leaves base values untouched.
        let mut collapsed: Vec<(u64, f32, usize, DeltaTensors)> = Vec::new();
        for term in state.terms.iter().filter(|t| t.layers.contains(&layer)) {
            if let Some(slot) = collapsed.iter_mut().find(|c| c.0 == term.delta_id) {
                slot.1 += term.alpha;
            } else {
                collapsed.push((
                    term.delta_id,
                    term.alpha,
                    term.delta_len,
                    Arc::clone(&term.values),
                ));
            }
        }
        collapsed.retain(|c| c.1 != 0.0);

        let base = &state.base_v[layer];
        let v = cache.layer_v_mut(layer);
        v.copy_from_slice(base);
        if collapsed.is_empty() {
            continue;
        }
        for row in 0..len {
            let parts: Vec<(f32, &[f32])> = collapsed
                .iter()
                .filter(|(_, _, dlen, _)| row < (*dlen).min(len))
                .map(|(_, alpha, _, values)| (*alpha, values[&layer].as_slice()))
                .collect();
            if parts.is_empty() {
                continue;
            }
            let acc = accumulate_row(&parts, row, width);
            for (i, a) in acc.iter().enumerate() {
                v[row * width + i] = base[row * width + i] + a;
            }
        }
    }
}

fn check_delta_target(delta: &SteeringDelta, cache: &KvCache) -> Result<(), SteerError> {
    if delta.fingerprint() != cache.fingerprint() {
        return Err(SteerError::FingerprintMismatch {
            delta: delta.fingerprint().to_string(),
            target: cache.fingerprint().to_string(),
        });
    }
    if delta.n_heads() != cache.n_heads() || delta.d_head() != cache.d_head() {
        return Err(SteerError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            delta.n_heads(),
            delta.d_head(),
            cache.n_heads(),
            cache.d_head()
        )));
    }
    Ok(())
}

fn resolve_range(
    range: &LayerRange,
    delta: &SteeringDelta,
    cache: &KvCache,
) -> Result<Vec<usize>, SteerError> {
    let layers = range.resolve(cache.n_layers());
    if let Some(&bad) = layers.iter().find(|&&l| l >= cache.n_layers()) {
        return Err(SteerError::LayerOutOfRange {
            index: bad,
            n_layers: cache.n_layers(),
        });
    }
    let missing: Vec<usize> = layers
        .iter()
        .copied()
        .filter(|l| !delta.covers(*l))
        .collect();
    if !missing.is_empty() {
        return Err(SteerError::RangeNotCovered(missing));
    }
    Ok(layers)
}

/// Build a delta from matched example pairs. Each text renders through the
/// dialect's system segment and forward-passes; per-pair value differences
/// (truncated to the shorter pair member) are averaged element-wise across
/// pairs. Keys are never stored.
pub fn build_delta(
    good: &[String],
    bad: &[String],
    dialect: &str,
    model: &Model,
    templates: &TemplateSet,
) -> Result<SteeringDelta, SteerError> {
    if good.is_empty() || bad.is_empty() {
        return Err(SteerError::EmptyExamples);
    }
    if good.len() != bad.len() {
        return Err(SteerError::CountMismatch {
            good: good.len(),
            bad: bad.len(),
        });
    }
    let template = templates.get(dialect).map_err(PipelineError::from)?;
    let specials = templates.specials();

    let forward_values = |text: &str| -> Result<KvCache, SteerError> {
        let rendered = template.open_system_segment(text);
        let tokens = crate::model::tokenize(&rendered, Some(specials));
        Ok(model.forward(&tokens, None)?.cache)
    };

    let mut pair_deltas: Vec<(usize, Vec<Vec<f32>>)> = Vec::new();
    let mut truncated_pairs = 0usize;
    for (g, b) in good.iter().zip(bad) {
        let gc = forward_values(g)?;
        let bc = forward_values(b)?;
        let len = gc.len().min(bc.len());
        if gc.len() != bc.len() {
            truncated_pairs += 1;
        }
        let width = gc.row_width();
        let per_layer: Vec<Vec<f32>> = (0..gc.n_layers())
            .map(|l| {
                let gv = gc.layer_v(l);
                let bv = bc.layer_v(l);
                (0..len * width).map(|i| gv[i] - bv[i]).collect()
            })
            .collect();
        pair_deltas.push((len, per_layer));
    }

    let len = pair_deltas.iter().map(|(l, _)| *l).min().unwrap_or(0);
    let n_layers = model.config().n_layers;
    let width = model.config().n_heads * model.config().d_head;
    let n = pair_deltas.len() as f64;
    // Mean in f64 so duplicating a pair cannot move the result: the sum of
    // n identical values divided by n round-trips exactly.
    let mut values = BTreeMap::new();
    for l in 0..n_layers {
        let mut acc = vec![0.0f64; len * width];
        for (_, per_layer) in &pair_deltas {
            for (i, a) in acc.iter_mut().enumerate() {
                *a += f64::from(per_layer[l][i]);
            }
        }
        let mean: Vec<f32> = acc.iter().map(|a| (*a / n) as f32).collect();
        values.insert(l, mean);
    }

    let provenance = (0..good.len()).map(|i| format!("pair-{i}")).collect();
    Ok(SteeringDelta::new(
        model.fingerprint(),
        model.config().n_heads,
        model.config().d_head,
        len,
        (0..n_layers).collect(),
        values,
        provenance,
        truncated_pairs,
    ))
}

/// Apply `alpha * delta` to the cached values over `range`, broadcast across
/// the first `min(cache len, delta len)` rows. Keys and out-of-range layers
/// are bit-identical to the input.
pub fn apply_delta(
    cache: &KvCache,
    delta: &SteeringDelta,
    alpha: f32,
    range: &LayerRange,
) -> Result<KvCache, SteerError> {
    check_delta_target(delta, cache)?;
    let layers = resolve_range(range, delta, cache)?;

    let mut out = cache.clone();
    let mut state = match out.steer() {
        Some(s) => s.clone(),
        None => SteerState {
            base_v: (0..out.n_layers()).map(|l| out.layer_v(l).to_vec()).collect(),
            terms: Vec::new(),
        },
    };
    state.terms.push(SteerTerm {
        delta_id: delta.content_id(),
        alpha,
        layers,
        delta_len: delta.len(),
        values: delta.values_arc(),
    });
    out.set_steer(Some(state));
    materialize(&mut out);
    Ok(out)
}

/// Debug arm: apply the delta to the cached *keys* instead. Keys are stored
/// rotated, so this corrupts relative-position structure — kept to make the
/// key-vs-value contrast reproducible. Eager, no ledger.
pub fn apply_delta_keys(
    cache: &KvCache,
    delta: &SteeringDelta,
    alpha: f32,
    range: &LayerRange,
) -> Result<KvCache, SteerError> {
    check_delta_target(delta, cache)?;
    let layers = resolve_range(range, delta, cache)?;
    let mut out = cache.clone();
    let width = out.row_width();
    let rows = out.len().min(delta.len());
    for l in layers {
        let tensor = delta.layer(l).expect("resolved range is covered");
        let k = out.layer_k_mut(l);
        for i in 0..rows * width {
            k[i] += alpha * tensor[i];
        }
    }
    Ok(out)
}

/// Element-wise weighted sum of deltas over the union of covered layers;
/// uncovered layers contribute nothing. Source length is the minimum over
/// terms; summation order is ascending term index.
pub fn compose_deltas(terms: &[(SteeringDelta, f32)]) -> Result<SteeringDelta, SteerError> {
    let (first, _) = terms.first().ok_or(SteerError::EmptyComposition)?;
    for (d, _) in terms {
        if d.fingerprint() != first.fingerprint() {
            return Err(SteerError::FingerprintMismatch {
                delta: d.fingerprint().to_string(),
                target: first.fingerprint().to_string(),
            });
        }
        if d.n_heads() != first.n_heads() || d.d_head() != first.d_head() {
            return Err(SteerError::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                d.n_heads(),
                d.d_head(),
                first.n_heads(),
                first.d_head()
            )));
        }
    }
    let len = terms.iter().map(|(d, _)| d.len()).min().unwrap_or(0);
    let width = first.n_heads() * first.d_head();
    let mut layers: Vec<usize> = terms.iter().flat_map(|(d, _)| d.layers().to_vec()).collect();
    layers.sort_unstable();
    layers.dedup();

    let mut values = BTreeMap::new();
    for &l in &layers {
        let parts: Vec<(f32, &[f32])> = terms
            .iter()
            .filter_map(|(d, alpha)| d.layer(l).map(|t| (*alpha, t)))
            .collect();
        let mut tensor = Vec::with_capacity(len * width);
        for row in 0..len {
            tensor.extend_from_slice(&accumulate_row(&parts, row, width));
        }
        values.insert(l, tensor);
    }

    let provenance = terms
        .iter()
        .flat_map(|(d, _)| d.provenance().iter().cloned())
        .collect();
    Ok(SteeringDelta::new(
        first.fingerprint(),
        first.n_heads(),
        first.d_head(),
        len,
        layers,
        values,
        provenance,
        0,
    ))
}

/// Cosine similarity of two deltas, flattened over their shared layers and
/// truncated to the shorter source length. Zero when either side is all
/// zeros over the shared region.
pub fn delta_cosine(a: &SteeringDelta, b: &SteeringDelta) -> Result<f64, SteerError> {
    if a.fingerprint() != b.fingerprint() {
        return Err(SteerError::FingerprintMismatch {
            delta: a.fingerprint().to_string(),
            target: b.fingerprint().to_string(),
        });
    }
    let shared: Vec<usize> = a
        .layers()
        .iter()
        .copied()
        .filter(|l| b.covers(*l))
        .collect();
    if shared.is_empty() {
        return Err(SteerError::NoSharedLayers);
    }
    let width = a.n_heads() * a.d_head();
    let rows = a.len().min(b.len());
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for &l in &shared {
        let ta = a.layer(l).unwrap();
        let tb = b.layer(l).unwrap();
        for i in 0..rows * width {
            let x = f64::from(ta[i]);
            let y = f64::from(tb[i]);
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Knowledge and steering through one cache: apply the delta to the pack's
/// values over `range`, then run the read phase. At `alpha = 0` this is
/// bit-identical to plain querying.
#[allow(clippy::too_many_arguments)]
pub fn dual_channel_query(
    pack: &crate::kv::KnowledgePack,
    delta: &SteeringDelta,
    alpha: f32,
    range: &LayerRange,
    question: &str,
    max_new: usize,
    model: &Model,
    templates: &TemplateSet,
) -> Result<QueryOutput, SteerError> {
    let steered = apply_delta(&pack.cache, delta, alpha, range)?;
    Ok(pipeline::query_with_pack(
        &pack.with_cache(steered),
        question,
        max_new,
        model,
        templates,
    )?)
}
