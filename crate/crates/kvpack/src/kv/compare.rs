//! Cache equality reporting. Mismatch is an outcome, not an error: the
//! report says where two caches differ and by how much.

use std::fmt;

use super::KvCache;

/// Per-layer maximum absolute differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerDiff {
    pub layer: usize,
    pub max_k: f64,
    pub max_v: f64,
}

/// Outcome of comparing two caches at a tolerance.
#[derive(Debug, Clone)]
pub struct CacheComparison {
    pub tolerance: f64,
    /// Set when lengths, layer counts, or head shapes differ.
    pub shape_mismatch: Option<String>,
    /// Set when position offsets differ.
    pub offset_mismatch: Option<(usize, usize)>,
    /// Informational; fingerprints do not affect equality.
    pub fingerprint_mismatch: bool,
    /// Present when shapes match.
    pub layers: Vec<LayerDiff>,
    equal: bool,
}

impl CacheComparison {
    /// True iff shapes and offsets match and every element-wise difference
    /// is within tolerance.
    pub fn equal(&self) -> bool {
        self.equal
    }

    /// Largest difference across all layers, K and V.
    pub fn max_diff(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.max_k.max(l.max_v))
            .fold(0.0, f64::max)
    }

    /// Layer with the largest difference, if any layer differs at all.
    pub fn worst_layer(&self) -> Option<&LayerDiff> {
        self.layers
            .iter()
            .max_by(|a, b| {
                (a.max_k.max(a.max_v))
                    .partial_cmp(&b.max_k.max(b.max_v))
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .filter(|l| l.max_k.max(l.max_v) > 0.0)
    }
}

impl fmt::Display for CacheComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(s) = &self.shape_mismatch {
            writeln!(f, "shape mismatch: {s}")?;
        }
        if let Some((a, b)) = self.offset_mismatch {
            writeln!(f, "offset mismatch: {a} vs {b}")?;
        }
        if self.fingerprint_mismatch {
            writeln!(f, "note: fingerprints differ")?;
        }
        for l in &self.layers {
            writeln!(
                f,
                "layer {:>2}: max |dK| = {:.3e}  max |dV| = {:.3e}",
                l.layer, l.max_k, l.max_v
            )?;
        }
        write!(
            f,
            "caches {} at tolerance {:e}",
            if self.equal { "equal" } else { "differ" },
            self.tolerance
        )
    }
}

/// Compare two caches element-wise. NaN differences never pass.
pub fn caches_equal(a: &KvCache, b: &KvCache, tolerance: f64) -> CacheComparison {
    let mut shape_mismatch = None;
    if a.n_layers() != b.n_layers() {
        shape_mismatch = Some(format!("layer count {} vs {}", a.n_layers(), b.n_layers()));
    } else if a.len() != b.len() {
        shape_mismatch = Some(format!("length {} vs {}", a.len(), b.len()));
    } else if a.n_heads() != b.n_heads() || a.d_head() != b.d_head() {
        shape_mismatch = Some(format!(
            "head shape {}x{} vs {}x{}",
            a.n_heads(),
            a.d_head(),
            b.n_heads(),
            b.d_head()
        ));
    }
    let offset_mismatch = (a.position_offset() != b.position_offset())
        .then_some((a.position_offset(), b.position_offset()));

    let mut layers = Vec::new();
    let mut within = true;
    if shape_mismatch.is_none() {
        for l in 0..a.n_layers() {
            let max_k = max_abs_diff(a.layer_k(l), b.layer_k(l));
            let max_v = max_abs_diff(a.layer_v(l), b.layer_v(l));
            // NaN differences never pass.
            if max_k > tolerance || max_v > tolerance || max_k.is_nan() || max_v.is_nan() {
                within = false;
            }
            layers.push(LayerDiff { layer: l, max_k, max_v });
        }
    }

    let equal = shape_mismatch.is_none() && offset_mismatch.is_none() && within;
    CacheComparison {
        tolerance,
        shape_mismatch,
        offset_mismatch,
        fingerprint_mismatch: a.fingerprint() != b.fingerprint(),
        layers,
        equal,
    }
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    let mut max = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = (f64::from(*x) - f64::from(*y)).abs();
        if d.is_nan() {
            return f64::NAN;
        }
        if d > max {
            max = d;
        }
    }
    max
}
