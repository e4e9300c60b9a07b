//! Seeded weight generation. Everything is drawn from one ChaCha20 stream in
//! a pinned order, so two instantiations of the same config are element-wise
//! identical on any platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::ModelConfig;

/// Feed-forward hidden width.
pub(crate) fn d_ff(config: &ModelConfig) -> usize {
    4 * config.d_model
}

#[derive(Debug, Clone)]
pub(crate) struct LayerWeights {
    pub attn_norm: Vec<f32>,
    /// Row-major `[d_model x d_model]` projections.
    pub wq: Vec<f32>,
    pub wk: Vec<f32>,
    pub wv: Vec<f32>,
    pub wo: Vec<f32>,
    pub ffn_norm: Vec<f32>,
    /// `[d_ff x d_model]`.
    pub w1: Vec<f32>,
    /// `[d_model x d_ff]`.
    pub w2: Vec<f32>,
}

#[derive(Debug, Clone)]
pub(crate) struct ModelWeights {
    /// `[vocab_size x d_model]` token embedding table.
    pub embed: Vec<f32>,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Vec<f32>,
    /// `[vocab_size x d_model]` output head.
    pub head: Vec<f32>,
}

impl ModelWeights {
    /// Draw order: embedding table, then per layer q/k/v/o, w1, w2, then the
    /// head. Matrices are uniform in (-1, 1) scaled by 1/sqrt(d_model); norm
    /// gains start at one and are not drawn from the stream.
    pub fn generate(config: &ModelConfig) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(config.weight_seed);
        let scale = 1.0 / (config.d_model as f32).sqrt();
        let mut mat = |rows: usize, cols: usize| -> Vec<f32> {
            (0..rows * cols)
                .map(|_| (rng.random::<f32>() * 2.0 - 1.0) * scale)
                .collect()
        };
        let embed = mat(config.vocab_size, config.d_model);
        let hidden = d_ff(config);
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                attn_norm: vec![1.0; config.d_model],
                wq: mat(config.d_model, config.d_model),
                wk: mat(config.d_model, config.d_model),
                wv: mat(config.d_model, config.d_model),
                wo: mat(config.d_model, config.d_model),
                ffn_norm: vec![1.0; config.d_model],
                w1: mat(hidden, config.d_model),
                w2: mat(config.d_model, hidden),
            })
            .collect();
        let final_norm = vec![1.0; config.d_model];
        let head = mat(config.vocab_size, config.d_model);
        ModelWeights {
            embed,
            layers,
            final_norm,
            head,
        }
    }
}
