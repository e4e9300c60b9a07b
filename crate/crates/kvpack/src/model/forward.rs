//! The forward pass and greedy decoding.
//!
//! Tokens are processed strictly one at a time and every reduction runs in a
//! fixed ascending order, with no fused multiply-adds and no reassociation.
//! Because position `t` only ever reads cache rows `0..=t`, the cache rows
//! written for a prefix are bit-identical whether or not more tokens follow
//! — the exact-equality backbone of the whole crate.

use crate::kv::KvCache;

use super::config::{Fingerprint, ModelConfig};
use super::rope::rotate_in_place;
use super::tokenizer::TokenId;
use super::weights::{d_ff, ModelWeights};
use super::ModelError;

const NORM_EPS: f32 = 1e-5;

/// Logits for each newly processed token, plus the extended cache.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Vec<Vec<f32>>,
    pub cache: KvCache,
}

impl ForwardOutput {
    pub fn last_logits(&self) -> Option<&[f32]> {
        self.logits.last().map(Vec::as_slice)
    }
}

/// A small decoder-only transformer: pre-norm blocks, full multi-head causal
/// attention with rotary positions on queries and keys, and a two-layer
/// feed-forward. Immutable after construction and safe to share across
/// threads; each pass owns its scratch state.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    weights: ModelWeights,
    fingerprint: Fingerprint,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let fingerprint = config.fingerprint();
        let weights = ModelWeights::generate(&config);
        Ok(Self {
            config,
            weights,
            fingerprint,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn empty_cache(&self) -> KvCache {
        self.empty_cache_at(0)
    }

    /// An empty cache whose first row will take rotary position `offset`.
    pub fn empty_cache_at(&self, offset: usize) -> KvCache {
        KvCache::empty(
            self.fingerprint,
            self.config.n_layers,
            self.config.n_heads,
            self.config.d_head,
            offset,
        )
    }

    /// Rotate a head-sized vector to `position`. Errors when the vector is
    /// not `d_head` long.
    pub fn rope_rotate(&self, vector: &[f32], position: usize) -> Result<Vec<f32>, ModelError> {
        if vector.len() != self.config.d_head {
            return Err(ModelError::VectorLength {
                got: vector.len(),
                expected: self.config.d_head,
            });
        }
        Ok(super::rope::rope_rotate(
            vector,
            position,
            self.config.rope_theta,
        ))
    }

    fn check_past(&self, past: &KvCache) -> Result<(), ModelError> {
        if past.fingerprint() != self.fingerprint {
            return Err(ModelError::FingerprintMismatch {
                cache: past.fingerprint(),
                model: self.fingerprint,
            });
        }
        if past.n_layers() != self.config.n_layers
            || past.n_heads() != self.config.n_heads
            || past.d_head() != self.config.d_head
        {
            return Err(ModelError::CacheShape(format!(
                "{} layers of {}x{}, model wants {} layers of {}x{}",
                past.n_layers(),
                past.n_heads(),
                past.d_head(),
                self.config.n_layers,
                self.config.n_heads,
                self.config.d_head
            )));
        }
        Ok(())
    }

    fn check_capacity(&self, cache: &KvCache, new: usize) -> Result<(), ModelError> {
        let end = cache.position_offset() + cache.len() + new;
        if end > self.config.max_position {
            return Err(ModelError::PositionOverflow {
                offset: cache.position_offset(),
                len: cache.len() + new,
                max: self.config.max_position,
            });
        }
        Ok(())
    }

    /// Run the model over `tokens`, continuing from `past` when given. The
    /// returned cache holds the past rows followed by the new rows, with new
    /// rotary positions continuing where the past left off.
    pub fn forward(&self, tokens: &[TokenId], past: Option<&KvCache>) -> Result<ForwardOutput, ModelError> {
        let mut cache = match past {
            Some(p) => {
                self.check_past(p)?;
                p.clone()
            }
            None => self.empty_cache(),
        };
        self.check_capacity(&cache, tokens.len())?;
        let mut logits = Vec::with_capacity(tokens.len());
        for &t in tokens {
            logits.push(self.forward_one(t, &mut cache)?);
        }
        Ok(ForwardOutput { logits, cache })
    }

    /// Greedy decoding: argmax at each step, ties broken by lowest token id,
    /// stopping at `max_new` tokens or when `stop` is produced (the stop
    /// token itself is not emitted).
    pub fn generate_greedy(
        &self,
        prompt: &[TokenId],
        past: Option<&KvCache>,
        max_new: usize,
        stop: Option<TokenId>,
    ) -> Result<Vec<TokenId>, ModelError> {
        if max_new == 0 {
            return Ok(Vec::new());
        }
        if prompt.is_empty() {
            return Err(ModelError::EmptyPrompt);
        }
        let mut cache = match past {
            Some(p) => {
                self.check_past(p)?;
                p.clone()
            }
            None => self.empty_cache(),
        };
        self.check_capacity(&cache, prompt.len())?;

        let mut last = Vec::new();
        for &t in prompt {
            last = self.forward_one(t, &mut cache)?;
        }

        let mut out = Vec::new();
        loop {
            let next = argmax(&last);
            if stop == Some(next) {
                break;
            }
            out.push(next);
            if out.len() == max_new {
                break;
            }
            if self.check_capacity(&cache, 1).is_err() {
                break; // context exhausted; both delivery paths hit this at the same step
            }
            last = self.forward_one(next, &mut cache)?;
        }
        Ok(out)
    }

    /// Process one token at the cache's next position, appending one row per
    /// layer and returning the logits.
    fn forward_one(&self, token: TokenId, cache: &mut KvCache) -> Result<Vec<f32>, ModelError> {
        if token as usize >= self.config.vocab_size {
            return Err(ModelError::TokenOutOfRange(token, self.config.vocab_size));
        }
        let d = self.config.d_model;
        let dh = self.config.d_head;
        let heads = self.config.n_heads;
        let theta = self.config.rope_theta;
        let pos = cache.position_offset() + cache.len();
        let rows = cache.len() + 1;
        let width = heads * dh;
        let scale = 1.0 / (dh as f32).sqrt();

        let t = token as usize;
        let mut x = self.weights.embed[t * d..(t + 1) * d].to_vec();

        for (l, lw) in self.weights.layers.iter().enumerate() {
            // Attention block (pre-norm).
            let h = rmsnorm(&x, &lw.attn_norm);
            let mut q = matvec(&lw.wq, &h, d, d);
            let mut k = matvec(&lw.wk, &h, d, d);
            let v = matvec(&lw.wv, &h, d, d);
            for head in 0..heads {
                rotate_in_place(&mut q[head * dh..(head + 1) * dh], pos, theta);
                rotate_in_place(&mut k[head * dh..(head + 1) * dh], pos, theta);
            }
            cache.push_row(l, &k, &v);

            let keys = cache.layer_k(l);
            let values = cache.layer_v(l);
            let mut attn = vec![0.0f32; d];
            let mut scores = vec![0.0f32; rows];
            for head in 0..heads {
                let q_h = &q[head * dh..(head + 1) * dh];
                for (j, score) in scores.iter_mut().enumerate() {
                    let k_j = &keys[j * width + head * dh..j * width + (head + 1) * dh];
                    let mut s = 0.0f32;
                    for i in 0..dh {
                        s += q_h[i] * k_j[i];
                    }
                    *score = s * scale;
                }
                let mut max = f32::NEG_INFINITY;
                for &s in scores.iter() {
                    if s > max {
                        max = s;
                    }
                }
                let mut sum = 0.0f32;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                for (j, &e) in scores.iter().enumerate() {
                    let w = e / sum;
                    let v_j = &values[j * width + head * dh..j * width + (head + 1) * dh];
                    let out = &mut attn[head * dh..(head + 1) * dh];
                    for i in 0..dh {
                        out[i] += w * v_j[i];
                    }
                }
            }
            let o = matvec(&lw.wo, &attn, d, d);
            for i in 0..d {
                x[i] += o[i];
            }

            // Feed-forward block (pre-norm).
            let h2 = rmsnorm(&x, &lw.ffn_norm);
            let mut a = matvec(&lw.w1, &h2, d_ff(&self.config), d);
            for e in a.iter_mut() {
                *e = silu(*e);
            }
            let f = matvec(&lw.w2, &a, d, d_ff(&self.config));
            for i in 0..d {
                x[i] += f[i];
            }
        }
        cache.finish_token();

        let final_h = rmsnorm(&x, &self.weights.final_norm);
        Ok(matvec(
            &self.weights.head,
            &final_h,
            self.config.vocab_size,
            d,
        ))
    }
}

/// Lowest index among maxima: iterate ascending, replace only on strictly
/// greater. NaN logits are never selected.
pub fn argmax(logits: &[f32]) -> TokenId {
    let mut best = f32::NEG_INFINITY;
    let mut best_id = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > best {
            best = v;
            best_id = i;
        }
    }
    best_id as TokenId
}

fn rmsnorm(x: &[f32], gain: &[f32]) -> Vec<f32> {
    let mut ss = 0.0f32;
    for &e in x {
        ss += e * e;
    }
    let inv = 1.0 / (ss / x.len() as f32 + NORM_EPS).sqrt();
    x.iter().zip(gain).map(|(e, g)| e * inv * g).collect()
}

fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

/// Row-major `[rows x cols]` matrix times vector, accumulated in ascending
/// column order.
fn matvec(mat: &[f32], x: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    debug_assert_eq!(mat.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    let mut out = vec![0.0f32; rows];
    for (r, o) in out.iter_mut().enumerate() {
        let row = &mat[r * cols..(r + 1) * cols];
        let mut s = 0.0f32;
        for c in 0..cols {
            s += row[c] * x[c];
        }
        *o = s;
    }
    out
}
