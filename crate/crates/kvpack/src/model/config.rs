use std::fmt;
use std::str::FromStr;

use crate::hash::Hasher;

use super::ModelError;

/// Shape and seed of the toy transformer. Two equal configs always produce
/// the same fingerprint, the same weights, and therefore the same outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    /// Per-head dimension; must be even so rotary rotation pairs line up.
    pub d_head: usize,
    /// 256 byte tokens plus however many special tokens are registered.
    pub vocab_size: usize,
    /// Base of the rotary frequency ladder.
    pub rope_theta: f32,
    pub max_position: usize,
    pub weight_seed: u64,
}

impl Default for ModelConfig {
    /// Desk-scale default: small enough for seconds-scale test runs, deep
    /// enough to keep three distinct layer terciles.
    fn default() -> Self {
        Self {
            n_layers: 4,
            n_heads: 4,
            d_model: 64,
            d_head: 16,
            vocab_size: 262,
            rope_theta: 10_000.0,
            max_position: 2048,
            weight_seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_head", self.d_head),
            ("max_position", self.max_position),
        ] {
            if v == 0 {
                return Err(ModelError::ZeroField(name));
            }
        }
        if !self.d_head.is_multiple_of(2) {
            return Err(ModelError::OddHeadDim(self.d_head));
        }
        if self.d_model != self.n_heads * self.d_head {
            return Err(ModelError::DimMismatch {
                d_model: self.d_model,
                n_heads: self.n_heads,
                d_head: self.d_head,
            });
        }
        if self.vocab_size < 256 {
            return Err(ModelError::VocabTooSmall {
                vocab: self.vocab_size,
                specials: 0,
            });
        }
        Ok(())
    }

    /// Full validation against a special-token registry: the vocab must have
    /// room for every registered special id.
    pub fn validate_with_specials(&self, n_specials: usize) -> Result<(), ModelError> {
        self.validate()?;
        if self.vocab_size < 256 + n_specials {
            return Err(ModelError::VocabTooSmall {
                vocab: self.vocab_size,
                specials: n_specials,
            });
        }
        Ok(())
    }

    /// Stable 64-bit hash of every config field, in declared field order.
    pub fn fingerprint(&self) -> Fingerprint {
        let mut h = Hasher::new();
        h.write_u32(self.n_layers as u32);
        h.write_u32(self.n_heads as u32);
        h.write_u32(self.d_model as u32);
        h.write_u32(self.d_head as u32);
        h.write_u32(self.vocab_size as u32);
        h.write_f32(self.rope_theta);
        h.write_u32(self.max_position as u32);
        h.write_u64(self.weight_seed);
        Fingerprint(h.finish())
    }
}

/// Identifies the exact model a cache was built with. Rendered as 16 hex
/// characters; caches only load back into a model with the same fingerprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fingerprint(u64);

impl Fingerprint {
    pub fn as_u64(self) -> u64 {
        self.0
    }

    pub fn from_u64(v: u64) -> Self {
        Self(v)
    }

    /// 16-character lowercase hex form used in file headers and reports.
    pub fn to_hex(self) -> String {
        format!("{:016x}", self.0)
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for Fingerprint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 16 {
            return Err(format!("fingerprint must be 16 hex chars, got {}", s.len()));
        }
        u64::from_str_radix(s, 16)
            .map(Fingerprint)
            .map_err(|e| format!("bad fingerprint: {e}"))
    }
}
