//! Seeded k-means with k-means++ initialization, in two flavours: spherical
//! (maximum inner product, renormalized means) for the coarse partition and
//! Euclidean for product-quantizer sub-codebooks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Unit-norm data and centroids; assignment by largest inner product.
    Spherical,
    Euclidean,
}

#[derive(Debug, Clone, Copy)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct KMeansOutput {
    /// Row-major `k x dim`.
    pub centroids: Vec<f32>,
    pub assignments: Vec<u32>,
    /// Objective after every assignment pass: mean assigned inner product
    /// (spherical) or mean squared distance (Euclidean).
    pub objective: Vec<f64>,
    pub iterations: usize,
}

pub fn kmeans(data: &[f32], dim: usize, params: KMeansParams, metric: Metric) -> Result<KMeansOutput> {
    if dim == 0 || !data.len().is_multiple_of(dim) {
        return Err(Error::arg("k-means data is not a whole number of rows"));
    }
    let n = data.len() / dim;
    let k = params.k;
    if k == 0 {
        return Err(Error::arg("k must be positive"));
    }
    if n < k {
        return Err(Error::arg(format!("k-means needs at least k={k} points, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = plus_plus(data, dim, k, metric, &mut rng);
    let mut km = Assigner::new(dim, k, metric);
    let mut assignments = vec![0u32; n];
    let mut scores = vec![0.0f32; n];
    km.prepare(&centroids);
    km.assign_all(data, &centroids, &mut assignments, &mut scores);
    let mut objective = vec![mean(&scores)];
    let mut iterations = 0;
    for _ in 0..params.max_iters {
        iterations += 1;
        update(data, dim, k, metric, &assignments, &scores, &mut centroids);
        km.prepare(&centroids);
        let prev = assignments.clone();
        km.assign_all(data, &centroids, &mut assignments, &mut scores);
        objective.push(mean(&scores));
        if prev == assignments {
            break;
        }
    }
    Ok(KMeansOutput { centroids, assignments, objective, iterations })
}

fn mean(v: &[f32]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64
}

/// Squared-distance proxy used for k-means++ sampling.
#[inline]
fn seed_cost(x: &[f32], c: &[f32], metric: Metric) -> f64 {
    match metric {
        Metric::Spherical => (2.0 - 2.0 * dot(x, c) as f64).max(0.0),
        Metric::Euclidean => crate::linalg::squared_l2(x, c) as f64,
    }
}

/// Greedy k-means++: each step draws `2 + ln k` candidates by D^2 sampling
/// and keeps the one that lowers the total seeding cost most.
fn plus_plus(data: &[f32], dim: usize, k: usize, metric: Metric, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = Vec::with_capacity(k * dim);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(row(first));
    let mut cost: Vec<f64> = (0..n).map(|i| seed_cost(row(i), row(first), metric)).collect();
    let mut prefix = vec![0.0f64; n];
    let mut best_cost = vec![0.0f64; n];
    let mut trial_cost = vec![0.0f64; n];
    for _ in 1..k {
        let mut acc = 0.0;
        for (p, &c) in prefix.iter_mut().zip(&cost) {
            acc += c;
            *p = acc;
        }
        let total = acc;
        if !(total > 0.0) {
            // Every remaining point coincides with a chosen centre.
            let pick = (0..n).find(|&i| !chosen[i]).unwrap_or(0);
            chosen[pick] = true;
            centroids.extend_from_slice(row(pick));
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for _ in 0..trials {
            let target = rng.random::<f64>() * total;
            let mut cand = prefix.partition_point(|&p| p <= target).min(n - 1);
            // Rounding can land on a zero-cost point; step to a positive one.
            if cost[cand] <= 0.0 {
                cand = cost.iter().rposition(|&c| c > 0.0).unwrap();
            }
            let mut sum = 0.0;
            for (i, slot) in trial_cost.iter_mut().enumerate() {
                *slot = seed_cost(row(i), row(cand), metric).min(cost[i]);
                sum += *slot;
            }
            if best.is_none_or(|(_, s)| sum < s) {
                best = Some((cand, sum));
                std::mem::swap(&mut best_cost, &mut trial_cost);
            }
        }
        let (pick, _) = best.expect("at least two trials");
        chosen[pick] = true;
        std::mem::swap(&mut cost, &mut best_cost);
        centroids.extend_from_slice(row(pick));
    }
    centroids
}

/// Assignment kernel for one k-means pass; `scores` receives each point's
/// objective contribution.
struct Assigner {
    dim: usize,
    metric: Metric,
    l2: Option<NearestL2>,
}

impl Assigner {
    fn new(dim: usize, _k: usize, metric: Metric) -> Self {
        Assigner { dim, metric, l2: None }
    }

    fn prepare(&mut self, centroids: &[f32]) {
        if self.metric == Metric::Euclidean {
            self.l2 = Some(NearestL2::new(centroids, self.dim));
        }
    }

    fn assign_all(&self, data: &[f32], centroids: &[f32], out: &mut [u32], scores: &mut [f32]) {
        match self.metric {
            Metric::Spherical => {
                for (i, x) in data.chunks_exact(self.dim).enumerate() {
                    let mut best = 0u32;
                    let mut best_val = f32::NEG_INFINITY;
                    for (j, c) in centroids.chunks_exact(self.dim).enumerate() {
                        let v = dot(x, c);
                        if v > best_val {
                            best_val = v;
                            best = j as u32;
                        }
                    }
                    out[i] = best;
                    scores[i] = best_val;
                }
            }
            Metric::Euclidean => {
                let l2 = self.l2.as_ref().expect("prepare() runs first");
                let mut scratch = vec![0.0f32; l2.k];
                for (i, x) in data.chunks_exact(self.dim).enumerate() {
                    let best = l2.nearest(x, &mut scratch);
                    out[i] = best;
                    let c = &centroids[best as usize * self.dim..(best as usize + 1) * self.dim];
                    scores[i] = crate::linalg::squared_l2(x, c);
                }
            }
        }
    }
}

/// Nearest centroid by Euclidean distance, ranking `<x, c> - ||c||^2 / 2`
/// with the centroid table stored transposed so the inner loop runs over
/// centroids.
#[derive(Debug, Clone)]
pub struct NearestL2 {
    dim: usize,
    k: usize,
    transposed: Vec<f32>,
    neg_half_norms: Vec<f32>,
}

impl NearestL2 {
    pub fn new(centroids: &[f32], dim: usize) -> Self {
        let k = centroids.len() / dim;
        let mut transposed = vec![0.0f32; dim * k];
        for (j, c) in centroids.chunks_exact(dim).enumerate() {
            for (t, &v) in c.iter().enumerate() {
                transposed[t * k + j] = v;
            }
        }
        let neg_half_norms = centroids.chunks_exact(dim).map(|c| -0.5 * dot(c, c)).collect();
        NearestL2 { dim, k, transposed, neg_half_norms }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `scratch` must hold `k` floats. Ties go to the lowest index.
    #[inline]
    pub fn nearest(&self, x: &[f32], scratch: &mut [f32]) -> u32 {
        let k = self.k;
        let scores = &mut scratch[..k];
        scores.copy_from_slice(&self.neg_half_norms);
        for (t, &xt) in x.iter().enumerate().take(self.dim) {
            let col = &self.transposed[t * k..(t + 1) * k];
            for (s, &c) in scores.iter_mut().zip(col) {
                *s += xt * c;
            }
        }
        // Max first, then its first position: both passes vectorize, unlike
        // a running argmax.
        let best_val = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        scores.iter().position(|&v| v == best_val).unwrap_or(0) as u32
    }
}

fn update(
    data: &[f32],
    dim: usize,
    k: usize,
    metric: Metric,
    assignments: &[u32],
    scores: &[f32],
    centroids: &mut [f32],
) {
    let mut sums = vec![0.0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (x, &a) in data.chunks_exact(dim).zip(assignments) {
        let a = a as usize;
        counts[a] += 1;
        for (s, &v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(x) {
            *s += v as f64;
        }
    }
    // Points worst served by their centre, worst first, to re-seed empty
    // clusters.
    let empty: Vec<usize> = (0..k).filter(|&j| counts[j] == 0).collect();
    let mut donors: Vec<usize> = Vec::new();
    if !empty.is_empty() {
        donors = (0..assignments.len()).collect();
        match metric {
            Metric::Spherical => donors.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b))),
            Metric::Euclidean => donors.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b))),
        }
        // Never strip the last member from a cluster.
        let mut remaining = counts.clone();
        donors.retain(|&i| {
            let a = assignments[i] as usize;
            if remaining[a] > 1 {
                remaining[a] -= 1;
                true
            } else {
                false
            }
        });
    }
    let mut donor_iter = donors.into_iter();
    for j in 0..k {
        let c = &mut centroids[j * dim..(j + 1) * dim];
        if counts[j] == 0 {
            if let Some(i) = donor_iter.next() {
                c.copy_from_slice(&data[i * dim..(i + 1) * dim]);
            }
            continue;
        }
        let s = &sums[j * dim..(j + 1) * dim];
        match metric {
            Metric::Euclidean => {
                let inv = 1.0 / counts[j] as f64;
                for (cv, &sv) in c.iter_mut().zip(s) {
                    *cv = (sv * inv) as f32;
                }
            }
            Metric::Spherical => {
                let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
                // A mean that cancels to zero keeps its previous direction.
                if norm > 1e-12 {
                    for (cv, &sv) in c.iter_mut().zip(s) {
                        *cv = (sv / norm) as f32;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_blobs() -> Vec<f32> {
        let mut v = Vec::new();
        for i in 0..50 {
            let e = i as f32 * 1e-3;
            v.extend_from_slice(&[10.0 + e, 0.0]);
            v.extend_from_slice(&[-10.0, 5.0 - e]);
        }
        v
    }

    #[test]
    fn euclidean_separates_blobs() {
        let data = two_blobs();
        let out = kmeans(&data, 2, KMeansParams { k: 2, max_iters: 25, seed: 3 }, Metric::Euclidean).unwrap();
        for i in (0..100).step_by(2) {
            assert_eq!(out.assignments[i], out.assignments[0]);
            assert_ne!(out.assignments[i + 1], out.assignments[0]);
        }
    }

    #[test]
    fn k_equal_n_gives_each_point_its_own_cluster() {
        let data: Vec<f32> = (0..20).flat_map(|i| [i as f32, (i * i) as f32]).collect();
        let out = kmeans(&data, 2, KMeansParams { k: 20, max_iters: 10, seed: 1 }, Metric::Euclidean).unwrap();
        let mut seen = out.assignments.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 20);
        assert!(out.objective.last().unwrap().abs() < 1e-9);
    }

    #[test]
    fn duplicate_points_do_not_break_seeding() {
        let data = vec![1.0f32; 2 * 10];
        let out = kmeans(&data, 2, KMeansParams { k: 3, max_iters: 5, seed: 0 }, Metric::Euclidean).unwrap();
        assert!(out.centroids.iter().all(|c| c.is_finite()));
    }

    #[test]
    fn too_few_points_rejected() {
        assert!(kmeans(&[1.0, 2.0], 2, KMeansParams { k: 2, max_iters: 1, seed: 0 }, Metric::Euclidean).is_err());
    }
}
