//! Rotary position transform. Keys (and queries) get rotated by absolute
//! position before entering the cache; values never pass through here. That
//! asymmetry is what makes value-space arithmetic on caches meaningful.

/// Rotate a head-sized vector by its position. Adjacent element pairs
/// `(v[2p], v[2p+1])` form rotation planes; pair `p` turns by
/// `position * theta^(-2p/d)` radians. Position 0 is the identity.
pub fn rope_rotate(vector: &[f32], position: usize, theta: f32) -> Vec<f32> {
    let mut out = vector.to_vec();
    rotate_in_place(&mut out, position, theta);
    out
}

pub(crate) fn rotate_in_place(v: &mut [f32], position: usize, theta: f32) {
    debug_assert!(v.len().is_multiple_of(2));
    if position == 0 {
        return;
    }
    let d = v.len() as f32;
    let pos = position as f32;
    for p in 0..v.len() / 2 {
        let freq = theta.powf(-2.0 * (p as f32) / d);
        let angle = pos * freq;
        let (sin, cos) = angle.sin_cos();
        let a = v[2 * p];
        let b = v[2 * p + 1];
        v[2 * p] = a * cos - b * sin;
        v[2 * p + 1] = a * sin + b * cos;
    }
}
