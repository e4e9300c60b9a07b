//! The steering delta value type and its `KVSD` file format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::hash::Hasher;
use crate::kv::format::{ByteReader, ByteWriter, FormatError, DELTA_MAGIC, FORMAT_VERSION};
use crate::model::Fingerprint;

/// Per-layer value-difference tensors with the layers they cover. Tensors
/// are row-major `[len x n_heads x d_head]`, one per covered layer.
#[derive(Debug, Clone)]
pub struct SteeringDelta {
    fingerprint: Fingerprint,
    n_heads: usize,
    d_head: usize,
    len: usize,
    layers: Vec<usize>,
    values: Arc<BTreeMap<usize, Vec<f32>>>,
    provenance: Vec<String>,
    truncated_pairs: usize,
    content_id: u64,
}

impl SteeringDelta {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        fingerprint: Fingerprint,
        n_heads: usize,
        d_head: usize,
        len: usize,
        layers: Vec<usize>,
        values: BTreeMap<usize, Vec<f32>>,
        provenance: Vec<String>,
        truncated_pairs: usize,
    ) -> Self {
        debug_assert!(layers.iter().all(|l| values.contains_key(l)));
        debug_assert!(values
            .values()
            .all(|t| t.len() == len * n_heads * d_head));
        let content_id = content_id(len, &layers, &values);
        Self {
            fingerprint,
            n_heads,
            d_head,
            len,
            layers,
            values: Arc::new(values),
            provenance,
            truncated_pairs,
            content_id,
        }
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn d_head(&self) -> usize {
        self.d_head
    }

    /// Source length: number of rows each tensor covers.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Covered layer indices, ascending.
    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn covers(&self, layer: usize) -> bool {
        self.layers.binary_search(&layer).is_ok()
    }

    pub fn layer(&self, layer: usize) -> Option<&[f32]> {
        self.values.get(&layer).map(Vec::as_slice)
    }

    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    /// Pairs whose members tokenized to different lengths and were truncated
    /// during the build.
    pub fn truncated_pairs(&self) -> usize {
        self.truncated_pairs
    }

    /// Content hash: two deltas with identical tensors share an id, so a
    /// cache ledger can collapse repeated applications of the same delta.
    pub fn content_id(&self) -> u64 {
        self.content_id
    }

    pub(crate) fn values_arc(&self) -> Arc<BTreeMap<usize, Vec<f32>>> {
        Arc::clone(&self.values)
    }

    /// True when every covered tensor is numerically zero.
    pub fn is_zero(&self) -> bool {
        self.values.values().all(|t| t.iter().all(|&x| x == 0.0))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.magic(DELTA_MAGIC);
        w.fingerprint(self.fingerprint);
        w.u32(self.n_heads as u32);
        w.u32(self.d_head as u32);
        w.u64(self.len as u64);
        w.u32(self.truncated_pairs as u32);
        w.u32(self.layers.len() as u32);
        for &l in &self.layers {
            w.u32(l as u32);
        }
        w.u32(self.provenance.len() as u32);
        for p in &self.provenance {
            w.str(p);
        }
        for &l in &self.layers {
            w.f32_slice(&self.values[&l]);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = ByteReader::new(bytes);
        r.magic(DELTA_MAGIC)?;
        let fingerprint = r.fingerprint()?;
        let n_heads = r.u32()? as usize;
        let d_head = r.u32()? as usize;
        let len = r.u64()? as usize;
        let truncated_pairs = r.u32()? as usize;
        let layer_count = r.u32()? as usize;
        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            layers.push(r.u32()? as usize);
        }
        if layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FormatError::BadField(
                "covered layers must be strictly ascending".to_string(),
            ));
        }
        let prov_count = r.u32()? as usize;
        let mut provenance = Vec::with_capacity(prov_count);
        for _ in 0..prov_count {
            provenance.push(r.str()?);
        }
        let width = n_heads * d_head;
        let mut values = BTreeMap::new();
        for &l in &layers {
            values.insert(l, r.f32_vec(len * width)?);
        }
        r.finish()?;
        Ok(Self::new(
            fingerprint,
            n_heads,
            d_head,
            len,
            layers,
            values,
            provenance,
            truncated_pairs,
        ))
    }

    pub fn inspect(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "kind            delta (KVSD v{FORMAT_VERSION})");
        let _ = writeln!(out, "fingerprint     {}", self.fingerprint);
        let _ = writeln!(out, "source length   {} rows", self.len);
        let _ = writeln!(
            out,
            "tensor shape    {} x {} x {}",
            self.len, self.n_heads, self.d_head
        );
        let _ = writeln!(out, "covered layers  {:?}", self.layers);
        let _ = writeln!(out, "truncated pairs {}", self.truncated_pairs);
        let _ = writeln!(out, "provenance      {}", self.provenance.join(", "));
        out
    }
}

fn content_id(len: usize, layers: &[usize], values: &BTreeMap<usize, Vec<f32>>) -> u64 {
    let mut h = Hasher::new();
    h.write_u64(len as u64);
    for &l in layers {
        h.write_u32(l as u32);
        for &x in &values[&l] {
            h.write_f32(x);
        }
    }
    h.finish()
}
