//! The knowledge pack: a serialized KV cache plus the fact texts it was
//! built from, their embeddings, and the template dialect that framed them.

use std::fmt::Write as _;

use crate::model::{Fingerprint, ModelConfig};
use crate::routing::EmbeddingVector;

use super::format::{ByteReader, ByteWriter, FormatError, FORMAT_VERSION, PACK_MAGIC};
use super::KvCache;

/// A persisted knowledge unit: the cache over the rendered fact segment,
/// the facts themselves, one embedding per fact, and enough build metadata
/// to reproduce or validate the artifact.
#[derive(Debug, Clone)]
pub struct KnowledgePack {
    pub cache: KvCache,
    pub facts: Vec<String>,
    pub embeddings: Vec<EmbeddingVector>,
    /// Dialect the fact segment was rendered with.
    pub dialect: String,
    /// False for the raw-text ablation build that skips the chat template.
    pub use_template: bool,
    /// Echo of the model the cache belongs to.
    pub config: ModelConfig,
}

impl KnowledgePack {
    pub fn fingerprint(&self) -> Fingerprint {
        self.cache.fingerprint()
    }

    /// Serialize to the pinned `KVPK` layout: header, per-layer K then V as
    /// little-endian f32 in row-major order, then length-prefixed fact texts
    /// and embeddings.
    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = self.embeddings.first().map_or(0, |e| e.dim());
        let mut w = ByteWriter::new();
        w.magic(PACK_MAGIC);
        w.fingerprint(self.cache.fingerprint());
        write_config(&mut w, &self.config);
        w.str(&self.dialect);
        w.u8(u8::from(self.use_template));
        w.u64(self.cache.len() as u64);
        w.u64(self.cache.position_offset() as u64);
        w.u32(dim as u32);
        for l in 0..self.cache.n_layers() {
            w.f32_slice(self.cache.layer_k(l));
            w.f32_slice(self.cache.layer_v(l));
        }
        w.u32(self.facts.len() as u32);
        for f in &self.facts {
            w.str(f);
        }
        w.u32(self.embeddings.len() as u32);
        for e in &self.embeddings {
            w.f32_slice(e.as_slice());
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = ByteReader::new(bytes);
        r.magic(PACK_MAGIC)?;
        let fingerprint = r.fingerprint()?;
        let config = read_config(&mut r)?;
        if config.fingerprint() != fingerprint {
            return Err(FormatError::BadField(format!(
                "stored fingerprint {fingerprint} does not match config echo {}",
                config.fingerprint()
            )));
        }
        let dialect = r.str()?;
        let use_template = match r.u8()? {
            0 => false,
            1 => true,
            other => {
                return Err(FormatError::BadField(format!(
                    "use_template flag must be 0 or 1, got {other}"
                )))
            }
        };
        let len = r.u64()? as usize;
        let offset = r.u64()? as usize;
        let dim = r.u32()? as usize;
        if offset + len > config.max_position {
            return Err(FormatError::BadField(format!(
                "offset {offset} + length {len} exceeds max_position {}",
                config.max_position
            )));
        }

        let width = config.n_heads * config.d_head;
        let mut cache = KvCache::empty(
            fingerprint,
            config.n_layers,
            config.n_heads,
            config.d_head,
            offset,
        );
        let mut layer_data = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            let k = r.f32_vec(len * width)?;
            let v = r.f32_vec(len * width)?;
            layer_data.push((k, v));
        }
        for t in 0..len {
            for (layer, (k, v)) in layer_data.iter().enumerate() {
                cache.push_row(layer, &k[t * width..(t + 1) * width], &v[t * width..(t + 1) * width]);
            }
            cache.finish_token();
        }

        let fact_count = r.u32()? as usize;
        let mut facts = Vec::with_capacity(fact_count);
        for _ in 0..fact_count {
            facts.push(r.str()?);
        }
        let emb_count = r.u32()? as usize;
        if emb_count != fact_count {
            return Err(FormatError::SizeMismatch(format!(
                "embedding count {emb_count} != fact count {fact_count}"
            )));
        }
        let mut embeddings = Vec::with_capacity(emb_count);
        for _ in 0..emb_count {
            embeddings.push(EmbeddingVector::from_raw(r.f32_vec(dim)?));
        }
        r.finish()?;
        Ok(KnowledgePack {
            cache,
            facts,
            embeddings,
            dialect,
            use_template,
            config,
        })
    }

    /// Replace the cache, keeping facts and metadata. Used by steering to
    /// query through a steered copy of the same pack.
    pub fn with_cache(&self, cache: KvCache) -> Self {
        KnowledgePack {
            cache,
            ..self.clone()
        }
    }

    /// Human-readable dump of header fields, per-layer shapes, and facts.
    pub fn inspect(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "kind            pack (KVPK v{FORMAT_VERSION})");
        let _ = writeln!(out, "fingerprint     {}", self.cache.fingerprint());
        let _ = writeln!(
            out,
            "model           {} layers, {} heads x {} = d_model {}",
            self.config.n_layers, self.config.n_heads, self.config.d_head, self.config.d_model
        );
        let _ = writeln!(out, "dialect         {}", self.dialect);
        let _ = writeln!(out, "templated       {}", self.use_template);
        let _ = writeln!(out, "length          {} tokens", self.cache.len());
        let _ = writeln!(out, "position offset {}", self.cache.position_offset());
        for l in 0..self.cache.n_layers() {
            let _ = writeln!(
                out,
                "layer {:>2}        K,V: {} x {} x {}",
                l,
                self.cache.len(),
                self.cache.n_heads(),
                self.cache.d_head()
            );
        }
        let _ = writeln!(out, "facts           {}", self.facts.len());
        for (i, f) in self.facts.iter().enumerate() {
            let _ = writeln!(out, "  [{i}] {f}");
        }
        out
    }
}

pub(crate) fn write_config(w: &mut ByteWriter, c: &ModelConfig) {
    w.u32(c.n_layers as u32);
    w.u32(c.n_heads as u32);
    w.u32(c.d_model as u32);
    w.u32(c.d_head as u32);
    w.u32(c.vocab_size as u32);
    w.f32(c.rope_theta);
    w.u32(c.max_position as u32);
    w.u64(c.weight_seed);
}

pub(crate) fn read_config(r: &mut ByteReader) -> Result<ModelConfig, FormatError> {
    let config = ModelConfig {
        n_layers: r.u32()? as usize,
        n_heads: r.u32()? as usize,
        d_model: r.u32()? as usize,
        d_head: r.u32()? as usize,
        vocab_size: r.u32()? as usize,
        rope_theta: r.f32()?,
        max_position: r.u32()? as usize,
        weight_seed: r.u64()?,
    };
    config
        .validate()
        .map_err(|e| FormatError::BadField(e.to_string()))?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn empty_pack(dialect: &str) -> KnowledgePack {
        let config = ModelConfig::default();
        KnowledgePack {
            cache: KvCache::empty(
                config.fingerprint(),
                config.n_layers,
                config.n_heads,
                config.d_head,
                0,
            ),
            facts: vec![],
            embeddings: vec![],
            dialect: dialect.to_string(),
            use_template: true,
            config,
        }
    }

    #[test]
    fn empty_pack_is_exactly_header_sized() {
        // Oracle: sum of the header field widths.
        let dialect = "chatml";
        let expected = 4 + 2        // magic + version
            + 16                    // fingerprint hex
            + 4 * 6 + 4 + 8         // config echo: six u32 counts, f32 theta, u64 seed
            + 4 + dialect.len()     // dialect string
            + 1                     // use_template flag
            + 8 + 8                 // length + offset
            + 4                     // embedding dim
            + 4                     // fact count
            + 4; // embedding count
        assert_eq!(empty_pack(dialect).to_bytes().len(), expected);
    }

    #[test]
    fn truncation_by_one_is_truncated_error() {
        let bytes = empty_pack("chatml").to_bytes();
        let err = KnowledgePack::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, FormatError::Truncated { .. }), "{err:?}");
    }

    #[test]
    fn bad_magic_error() {
        let mut bytes = empty_pack("chatml").to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            KnowledgePack::from_bytes(&bytes),
            Err(FormatError::BadMagic { .. })
        ));
    }

    #[test]
    fn trailing_garbage_is_size_mismatch() {
        let mut bytes = empty_pack("chatml").to_bytes();
        bytes.push(0);
        assert!(matches!(
            KnowledgePack::from_bytes(&bytes),
            Err(FormatError::SizeMismatch(_))
        ));
    }

    #[test]
    fn round_trip_reserializes_identically() {
        let pack = empty_pack("header");
        let bytes = pack.to_bytes();
        let back = KnowledgePack::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
    }
}
