use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MetricsError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    /// `k x dim`, row-major.
    pub centroids: Vec<f64>,
    pub inertia: f64,
    /// Inertia after each assignment step, starting with the seeding.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid per point (lowest index on ties) and the inertia.
fn assign(points: &[f64], dim: usize, centroids: &[f64]) -> (Vec<usize>, Vec<f64>) {
    points
        .chunks_exact(dim)
        .map(|p| {
            centroids
                .chunks_exact(dim)
                .map(|c| sq_dist(p, c))
                .enumerate()
                .fold((0, f64::INFINITY), |best, (i, d)| if d < best.1 { (i, d) } else { best })
        })
        .unzip()
}

/// Greedy k-means++: each new centre is the best of `2 + ln k` candidates
/// drawn with probability proportional to squared distance.
fn seed_centroids(points: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let point = |i: usize| &points[i * dim..][..dim];
    let trials = 2 + (k as f64).ln() as usize;

    let first = rng.random_range(0..n);
    let mut centroids = point(first).to_vec();
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(point(i), point(first))).collect();

    for _ in 1..k {
        let potential: f64 = closest.iter().sum();
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for _ in 0..trials {
            let candidate = if potential > 0.0 {
                let target = rng.random::<f64>() * potential;
                let mut acc = 0.0;
                closest
                    .iter()
                    .position(|&d| {
                        acc += d;
                        acc > target
                    })
                    .unwrap_or(n - 1)
            } else {
                rng.random_range(0..n)
            };
            let updated: Vec<f64> = closest
                .iter()
                .enumerate()
                .map(|(i, &d)| d.min(sq_dist(point(i), point(candidate))))
                .collect();
            let total: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|(_, t, _)| total < *t) {
                best = Some((candidate, total, updated));
            }
        }
        let (chosen, _, updated) = best.expect("at least one trial");
        centroids.extend_from_slice(point(chosen));
        closest = updated;
    }
    centroids
}

/// Lloyd's algorithm on `n` points of dimension `dim` stored row-major.
///
/// Stops at an assignment fixed point or after `max_iter` updates. A cluster
/// that empties is moved onto the point farthest from its own centroid.
pub fn kmeans(points: &[f64], dim: usize, k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(MetricsError::BadDimension { len: points.len(), dim });
    }
    let n = points.len() / dim;
    if k == 0 || n < k {
        return Err(MetricsError::TooFewPoints { n, k });
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFiniteCost);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, dim, k, &mut rng);
    let (mut labels, mut dists) = assign(points, dim, &centroids);
    let mut history = vec![dists.iter().sum::<f64>()];
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.chunks_exact(dim).zip(&labels) {
            counts[c] += 1;
            sums[c * dim..][..dim].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                centroids[c * dim..][..dim]
                    .iter_mut()
                    .zip(&sums[c * dim..][..dim])
                    .for_each(|(m, s)| *m = s * inv);
            } else {
                let far = dists
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best })
                    .0;
                centroids[c * dim..][..dim].copy_from_slice(&points[far * dim..][..dim]);
                dists[far] = 0.0;
            }
        }
        let (new_labels, new_dists) = assign(points, dim, &centroids);
        history.push(new_dists.iter().sum());
        dists = new_dists;
        if new_labels == labels {
            break;
        }
        labels = new_labels;
    }

    Ok(KMeansResult {
        assignments: labels,
        centroids,
        inertia: *history.last().expect("non-empty"),
        inertia_history: history,
        iterations,
    })
}
