//! Per-layer key/value tensors with a position offset: the artifact every
//! other module produces, slices, compares, steers, or serializes.

use crate::model::Fingerprint;
use crate::steering::SteerState;

use super::KvError;

/// One layer's cached rows, row-major `[len x n_heads x d_head]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerKv {
    pub(crate) k: Vec<f32>,
    pub(crate) v: Vec<f32>,
}

/// Keys and values cached from a forward pass.
///
/// Keys are stored after rotary rotation at their absolute position
/// (`position_offset + row`); values are stored unrotated. All layers share
/// the same length. A cache is an immutable value: operations that change it
/// return a new cache.
#[derive(Debug, Clone)]
pub struct KvCache {
    fingerprint: Fingerprint,
    n_heads: usize,
    d_head: usize,
    position_offset: usize,
    len: usize,
    pub(crate) layers: Vec<LayerKv>,
    /// Value-steering ledger; see [`crate::steering`]. Derived state, never
    /// serialized, dropped when the cache is extended or sliced.
    pub(crate) steer: Option<SteerState>,
}

impl KvCache {
    /// An empty cache whose first appended row will sit at rotary position
    /// `position_offset`.
    pub fn empty(
        fingerprint: Fingerprint,
        n_layers: usize,
        n_heads: usize,
        d_head: usize,
        position_offset: usize,
    ) -> Self {
        Self {
            fingerprint,
            n_heads,
            d_head,
            position_offset,
            len: 0,
            layers: (0..n_layers)
                .map(|_| LayerKv {
                    k: Vec::new(),
                    v: Vec::new(),
                })
                .collect(),
            steer: None,
        }
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn d_head(&self) -> usize {
        self.d_head
    }

    pub fn position_offset(&self) -> usize {
        self.position_offset
    }

    /// Number of cached rows (tokens) per layer.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Floats per row in each of K and V.
    pub fn row_width(&self) -> usize {
        self.n_heads * self.d_head
    }

    /// Rotary position of row `t`.
    pub fn position_of(&self, t: usize) -> usize {
        self.position_offset + t
    }

    pub fn layer_k(&self, layer: usize) -> &[f32] {
        &self.layers[layer].k
    }

    pub fn layer_v(&self, layer: usize) -> &[f32] {
        &self.layers[layer].v
    }

    pub fn k_row(&self, layer: usize, t: usize) -> &[f32] {
        let w = self.row_width();
        &self.layers[layer].k[t * w..(t + 1) * w]
    }

    pub fn v_row(&self, layer: usize, t: usize) -> &[f32] {
        let w = self.row_width();
        &self.layers[layer].v[t * w..(t + 1) * w]
    }

    /// Build a cache from complete per-layer tensors, each row-major
    /// `[len x n_heads x d_head]` with K and V the same shape.
    pub fn from_layer_data(
        fingerprint: Fingerprint,
        n_heads: usize,
        d_head: usize,
        position_offset: usize,
        layers: Vec<(Vec<f32>, Vec<f32>)>,
    ) -> Result<Self, KvError> {
        let width = n_heads * d_head;
        let len = layers
            .first()
            .map(|(k, _)| k.len() / width.max(1))
            .unwrap_or(0);
        for (k, v) in &layers {
            if k.len() != len * width || v.len() != len * width {
                return Err(KvError::BadLayerData {
                    expected: len * width,
                    got_k: k.len(),
                    got_v: v.len(),
                });
            }
        }
        Ok(Self {
            fingerprint,
            n_heads,
            d_head,
            position_offset,
            len,
            layers: layers
                .into_iter()
                .map(|(k, v)| LayerKv { k, v })
                .collect(),
            steer: None,
        })
    }

    /// Append one row to a layer. A token's rows are pushed layer by layer
    /// and committed with [`Self::finish_token`].
    pub(crate) fn push_row(&mut self, layer: usize, k: &[f32], v: &[f32]) {
        debug_assert_eq!(k.len(), self.row_width());
        debug_assert_eq!(v.len(), self.row_width());
        self.layers[layer].k.extend_from_slice(k);
        self.layers[layer].v.extend_from_slice(v);
    }

    /// Commit one appended token. Extending a cache invalidates any steering
    /// ledger: the appended rows were computed against the steered values.
    pub(crate) fn finish_token(&mut self) {
        self.len += 1;
        self.steer = None;
        debug_assert!(self
            .layers
            .iter()
            .all(|l| l.k.len() == self.len * self.row_width()));
    }

    pub(crate) fn set_steer(&mut self, steer: Option<SteerState>) {
        self.steer = steer;
    }

    pub(crate) fn steer(&self) -> Option<&SteerState> {
        self.steer.as_ref()
    }

    pub(crate) fn layer_v_mut(&mut self, layer: usize) -> &mut Vec<f32> {
        &mut self.layers[layer].v
    }

    pub(crate) fn layer_k_mut(&mut self, layer: usize) -> &mut Vec<f32> {
        &mut self.layers[layer].k
    }

    /// First `t` rows of every layer, offset and fingerprint preserved.
    pub fn slice_prefix(&self, t: usize) -> Result<KvCache, KvError> {
        if t > self.len {
            return Err(KvError::SliceOutOfRange { t, len: self.len });
        }
        let w = self.row_width();
        Ok(KvCache {
            fingerprint: self.fingerprint,
            n_heads: self.n_heads,
            d_head: self.d_head,
            position_offset: self.position_offset,
            len: t,
            layers: self
                .layers
                .iter()
                .map(|l| LayerKv {
                    k: l.k[..t * w].to_vec(),
                    v: l.v[..t * w].to_vec(),
                })
                .collect(),
            steer: None,
        })
    }

    /// Raw tensor concatenation with no position correction. The appended
    /// rows keep the rotations they were built with, so unless `other` was
    /// built at the right offset the result is positionally wrong. Kept as
    /// the experimental contrast arm for sequential composition.
    pub fn concat_naive(&self, other: &KvCache) -> KvCache {
        debug_assert_eq!(self.n_layers(), other.n_layers());
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| {
                let mut k = a.k.clone();
                k.extend_from_slice(&b.k);
                let mut v = a.v.clone();
                v.extend_from_slice(&b.v);
                LayerKv { k, v }
            })
            .collect();
        KvCache {
            fingerprint: self.fingerprint,
            n_heads: self.n_heads,
            d_head: self.d_head,
            position_offset: self.position_offset,
            len: self.len + other.len,
            layers,
            steer: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn sample(len: usize) -> KvCache {
        let mut c = KvCache::empty(ModelConfig::default().fingerprint(), 2, 2, 4, 3);
        for t in 0..len {
            for layer in 0..2 {
                let base = (t * 10 + layer) as f32;
                let k: Vec<f32> = (0..8).map(|i| base + i as f32).collect();
                let v: Vec<f32> = (0..8).map(|i| base - i as f32).collect();
                c.push_row(layer, &k, &v);
            }
            c.finish_token();
        }
        c
    }

    #[test]
    fn full_slice_is_identity() {
        let c = sample(5);
        let s = c.slice_prefix(5).unwrap();
        assert_eq!(s.len(), c.len());
        for l in 0..2 {
            assert_eq!(s.layer_k(l), c.layer_k(l));
            assert_eq!(s.layer_v(l), c.layer_v(l));
        }
    }

    #[test]
    fn empty_slice_keeps_offset_and_fingerprint() {
        let c = sample(5);
        let s = c.slice_prefix(0).unwrap();
        assert_eq!(s.len(), 0);
        assert_eq!(s.position_offset(), 3);
        assert_eq!(s.fingerprint(), c.fingerprint());
    }

    #[test]
    fn slice_out_of_range() {
        let c = sample(2);
        assert!(matches!(
            c.slice_prefix(3),
            Err(KvError::SliceOutOfRange { t: 3, len: 2 })
        ));
    }

    #[test]
    fn slice_of_slice_is_min() {
        let c = sample(7);
        let a = c.slice_prefix(5).unwrap().slice_prefix(3).unwrap();
        let b = c.slice_prefix(3).unwrap();
        for l in 0..2 {
            assert_eq!(a.layer_k(l), b.layer_k(l));
            assert_eq!(a.layer_v(l), b.layer_v(l));
        }
    }

    #[test]
    fn rows_address_correctly() {
        let c = sample(3);
        assert_eq!(c.k_row(1, 2)[0], 21.0);
        assert_eq!(c.v_row(0, 1)[1], 9.0);
        assert_eq!(c.position_of(2), 5);
    }
}
