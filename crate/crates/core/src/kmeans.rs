//! Lloyd's algorithm with k-means++ seeding and a Hartigan refinement pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansOptions {
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no centroid moves by more than this (Euclidean).
    pub tol: f64,
    /// Independent k-means++ initialisations; the lowest SSE wins.
    pub restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            max_iter: 100,
            tol: 1e-9,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster index per input point, in `0..centroids.len()`.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squared distances.
    pub sse: f64,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding. Stops early when every point already coincides with
/// a chosen centre, so duplicate-heavy inputs get fewer clusters.
fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            if target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        centroids.push(points[pick].clone());
        for (slot, p) in d2.iter_mut().zip(points) {
            *slot = slot.min(sq_dist(p, &points[pick]));
        }
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, opts: &KMeansOptions) -> KMeansResult {
    let dim = points[0].len();
    let k = centroids.len();
    let mut assignments = vec![0usize; points.len()];
    let mut iterations = 0;
    for _ in 0..opts.max_iter.max(1) {
        iterations += 1;
        let mut dists = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            assignments[i] = j;
            dists[i] = d;
        }

        // Re-seed empty clusters from the point farthest from its centre.
        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let far = (0..points.len())
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                counts[assignments[i]] -= 1;
                assignments[i] = j;
                counts[j] = 1;
                dists[i] = 0.0;
            }
        }

        let mut next = vec![vec![0.0; dim]; k];
        for (p, &a) in points.iter().zip(&assignments) {
            for (s, x) in next[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for (j, c) in next.iter_mut().enumerate() {
            if counts[j] == 0 {
                c.clone_from(&centroids[j]);
            } else {
                c.iter_mut().for_each(|s| *s /= counts[j] as f64);
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b))
            .fold(0.0, f64::max);
        centroids = next;
        if shift.sqrt() <= opts.tol {
            break;
        }
    }
    for (i, p) in points.iter().enumerate() {
        assignments[i] = nearest(p, &centroids).0;
    }
    hartigan_refine(
        points,
        &mut assignments,
        &mut centroids,
        opts.max_iter.max(1),
    );
    let sse = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum();
    KMeansResult {
        assignments,
        centroids,
        sse,
        iterations,
    }
}

fn recompute_centroid(
    points: &[Vec<f64>],
    assignments: &[usize],
    j: usize,
    c: &mut [f64],
) -> usize {
    c.iter_mut().for_each(|x| *x = 0.0);
    let mut n = 0;
    for (p, &a) in points.iter().zip(assignments) {
        if a == j {
            n += 1;
            for (s, x) in c.iter_mut().zip(p) {
                *s += x;
            }
        }
    }
    if n > 0 {
        c.iter_mut().for_each(|s| *s /= n as f64);
    }
    n
}

/// Single-point moves that strictly lower the SSE (Hartigan's criterion).
/// Lloyd stops at any partition where each point is nearest its own
/// centroid; moving a point can still pay off because its removal also
/// shifts the centroid it leaves.
fn hartigan_refine(
    points: &[Vec<f64>],
    assignments: &mut [usize],
    centroids: &mut [Vec<f64>],
    max_passes: usize,
) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for j in 0..k {
        counts[j] = recompute_centroid(points, assignments, j, &mut centroids[j]);
    }
    for _ in 0..max_passes {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let a = assignments[i];
            if counts[a] <= 1 {
                continue;
            }
            let na = counts[a] as f64;
            let leave = na / (na - 1.0) * sq_dist(p, &centroids[a]);
            let mut best: Option<(usize, f64)> = None;
            for b in (0..k).filter(|&b| b != a && counts[b] > 0) {
                let nb = counts[b] as f64;
                let join = nb / (nb + 1.0) * sq_dist(p, &centroids[b]);
                let gain = leave - join;
                if gain > 1e-12 * (1.0 + leave) && best.is_none_or(|(_, g)| gain > g) {
                    best = Some((b, gain));
                }
            }
            if let Some((b, _)) = best {
                assignments[i] = b;
                counts[a] = recompute_centroid(points, assignments, a, &mut centroids[a]);
                counts[b] = recompute_centroid(points, assignments, b, &mut centroids[b]);
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
}

/// Clusters `points` into at most `k` groups. Deterministic for a given
/// `opts.seed`. The effective cluster count never exceeds the number of
/// distinct points.
pub fn kmeans(points: &[Vec<f64>], k: usize, opts: &KMeansOptions) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    let Some(first) = points.first() else {
        return Err(Error::invalid("k-means needs at least one point"));
    };
    let dim = first.len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::invalid("k-means points must be finite"));
    }
    let k = k.min(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..opts.restarts.max(1) {
        let init = seed_centroids(points, k, &mut rng);
        let run = lloyd(points, init, opts);
        if best.as_ref().is_none_or(|b| run.sse < b.sse) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}
