//! Lloyd's algorithm with k-means++ seeding over cosine similarity.
//! Everything that could vary is pinned: the seeding draws, the iteration
//! cap, nearest-centroid tie-breaks, and the empty-cluster policy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::embed::{cosine, EmbeddingVector};
use super::RouteError;

const MAX_ITERS: usize = 100;

#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub centroids: Vec<Vec<f32>>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
    /// Sum of (1 - cosine) to the assigned centroid, recorded after each
    /// assignment step. Non-increasing across iterations.
    pub distortion_history: Vec<f64>,
}

impl KmeansResult {
    pub fn distortion(&self) -> f64 {
        *self.distortion_history.last().unwrap_or(&0.0)
    }
}

fn nearest(centroids: &[Vec<f32>], v: &[f32]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_cos = f64::NEG_INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let s = cosine(v, c);
        if s > best_cos {
            best_cos = s;
            best = i;
        }
    }
    (best, best_cos)
}

/// Cluster unit (or zero) vectors into `k` groups. Centroids are member
/// means; assignment maximizes cosine with ties to the lowest centroid
/// index; empty clusters are re-seeded with the point farthest from its
/// assigned centroid; stops at an assignment fixpoint or 100 iterations.
pub fn kmeans(
    vectors: &[EmbeddingVector],
    k: usize,
    seed: u64,
) -> Result<KmeansResult, RouteError> {
    let n = vectors.len();
    if k == 0 || k > n {
        return Err(RouteError::BadK { k, n });
    }
    let dim = vectors[0].dim();
    let data: Vec<&[f32]> = vectors.iter().map(|v| v.as_slice()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    // k-means++ seeding: first center uniform, then distance²-weighted.
    let mut centroids: Vec<Vec<f32>> = vec![data[rng.random_range(0..n)].to_vec()];
    while centroids.len() < k {
        let weights: Vec<f64> = data
            .iter()
            .map(|v| {
                let (_, cos) = nearest(&centroids, v);
                let d = (1.0 - cos).max(0.0);
                d * d
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let pick = if total == 0.0 {
            rng.random_range(0..n)
        } else {
            let r = rng.random::<f64>() * total;
            let mut cum = 0.0;
            let mut chosen = n - 1;
            for (i, w) in weights.iter().enumerate() {
                cum += w;
                if r < cum {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.push(data[pick].to_vec());
    }

    let mut assignments = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..MAX_ITERS {
        iterations += 1;
        // Assignment step.
        let mut changed = false;
        let mut distortion = 0.0f64;
        for (i, v) in data.iter().enumerate() {
            let (best, cos) = nearest(&centroids, v);
            distortion += 1.0 - cos;
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }

        // Re-seed empty clusters with the farthest point.
        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        let mut reseeded = false;
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let mut far = None;
            let mut far_d = f64::NEG_INFINITY;
            for (i, v) in data.iter().enumerate() {
                if counts[assignments[i]] <= 1 {
                    continue;
                }
                let d = 1.0 - cosine(v, &centroids[assignments[i]]);
                if d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
            let Some(far) = far else { continue };
            counts[assignments[far]] -= 1;
            assignments[far] = empty;
            counts[empty] = 1;
            centroids[empty] = data[far].to_vec();
            reseeded = true;
        }
        if reseeded {
            // Distortion recorded above no longer reflects assignments.
            let mut d = 0.0f64;
            for (i, v) in data.iter().enumerate() {
                d += 1.0 - cosine(v, &centroids[assignments[i]]);
            }
            distortion = d;
            changed = true;
        }
        history.push(distortion);

        if !changed && iterations > 1 {
            break;
        }

        // Update step: centroid = mean of members.
        let mut sums = vec![vec![0.0f64; dim]; k];
        for (i, v) in data.iter().enumerate() {
            let s = &mut sums[assignments[i]];
            for (j, x) in v.iter().enumerate() {
                s[j] += f64::from(*x);
            }
        }
        for (c, (sum, count)) in centroids.iter_mut().zip(sums.iter().zip(&counts)) {
            if *count == 0 {
                continue;
            }
            for (j, x) in c.iter_mut().enumerate() {
                *x = (sum[j] / *count as f64) as f32;
            }
        }
    }

    Ok(KmeansResult {
        centroids,
        assignments,
        iterations,
        distortion_history: history,
    })
}
