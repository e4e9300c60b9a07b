//! Deterministic text embeddings: signed feature hashing of lowercase
//! whitespace-split words into a fixed dimension, L2-normalized. A stand-in
//! for a learned sentence encoder that keeps routing fully reproducible.

use crate::hash::fnv1a;

/// Embedding width used throughout the routing index and pack files.
pub const EMBED_DIM: usize = 64;

/// Fixed-dimension real vector with unit Euclidean norm, or all zeros for
/// empty text.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn zero(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub(crate) fn from_raw(v: Vec<f32>) -> Self {
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|x| f64::from(*x) * f64::from(*x))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    /// Cosine similarity; zero when either vector is all zeros.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        cosine(&self.0, &other.0)
    }
}

pub(crate) fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let x = f64::from(*x);
        let y = f64::from(*y);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Embed text as a signed bag of words: each lowercased word hashes to a
/// bucket (low bits) and a sign (high bit); the counts are L2-normalized.
/// Identical text always gives an identical vector.
pub fn embed_text(text: &str) -> EmbeddingVector {
    let mut acc = vec![0.0f32; EMBED_DIM];
    let mut any = false;
    for word in text.split_whitespace() {
        let h = fnv1a(word.to_lowercase().as_bytes());
        let bucket = (h % EMBED_DIM as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        acc[bucket] += sign;
        any = true;
    }
    if !any {
        return EmbeddingVector(acc);
    }
    let norm = acc
        .iter()
        .map(|x| f64::from(*x) * f64::from(*x))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        // Signs cancelled exactly; keep the zero vector.
        return EmbeddingVector(acc);
    }
    let inv = (1.0 / norm) as f32;
    for x in acc.iter_mut() {
        *x *= inv;
    }
    EmbeddingVector(acc)
}
