//! Spherical k-means coarse partition: the only trained layer of the index.

use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeansParams, Metric};
use crate::linalg::dot;

pub const DEFAULT_KMEANS_ITERS: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct CoarsePartition {
    n_lists: usize,
    dim: usize,
    centroids: Vec<f32>,
    /// Internal ids per list.
    pub lists: Vec<Vec<u32>>,
    /// Mean assigned inner product after each training pass.
    objective: Vec<f64>,
}

/// Trains on unit-norm rows. The returned lists hold the training rows'
/// own indices.
pub fn train_partition(data: &[f32], dim: usize, n_lists: usize, seed: u64, max_iters: usize) -> Result<CoarsePartition> {
    if dim == 0 || !data.len().is_multiple_of(dim) {
        return Err(Error::arg("training data is not a whole number of rows"));
    }
    let n = data.len() / dim;
    if n_lists == 0 {
        return Err(Error::arg("n_lists must be at least 1"));
    }
    if n < n_lists {
        return Err(Error::arg(format!("need at least n_lists={n_lists} training vectors, got {n}")));
    }
    let out = kmeans(data, dim, KMeansParams { k: n_lists, max_iters, seed }, Metric::Spherical)?;
    let mut lists = vec![Vec::new(); n_lists];
    for (i, &a) in out.assignments.iter().enumerate() {
        lists[a as usize].push(i as u32);
    }
    Ok(CoarsePartition { n_lists, dim, centroids: out.centroids, lists, objective: out.objective })
}

impl CoarsePartition {
    /// Partition from explicit centroids (normalized here) with empty lists.
    pub fn from_centroids(centroids: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || !centroids.len().is_multiple_of(dim) {
            return Err(Error::arg("centroid matrix is not a whole number of rows"));
        }
        let centroids = crate::linalg::normalize_rows(&centroids, dim)?;
        let n_lists = centroids.len() / dim;
        Ok(CoarsePartition { n_lists, dim, centroids, lists: vec![Vec::new(); n_lists], objective: Vec::new() })
    }

    /// Single list with a zero centroid, so residuals are the vectors
    /// themselves and the coarse term vanishes. Backs the flat build mode.
    pub(crate) fn flat(dim: usize) -> Self {
        CoarsePartition { n_lists: 1, dim, centroids: vec![0.0; dim], lists: vec![Vec::new()], objective: Vec::new() }
    }

    pub(crate) fn from_raw_parts(centroids: Vec<f32>, dim: usize, lists: Vec<Vec<u32>>) -> Self {
        let n_lists = lists.len();
        CoarsePartition { n_lists, dim, centroids, lists, objective: Vec::new() }
    }

    pub fn n_lists(&self) -> usize {
        self.n_lists
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn centroid(&self, l: usize) -> &[f32] {
        &self.centroids[l * self.dim..(l + 1) * self.dim]
    }

    pub fn objective_history(&self) -> &[f64] {
        &self.objective
    }

    pub fn clear_lists(&mut self) {
        self.lists.iter_mut().for_each(Vec::clear);
    }

    pub fn len(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Nearest centroid by inner product; ties go to the lowest index.
    pub fn assign(&self, v: &[f32]) -> (usize, f32) {
        let mut best = 0;
        let mut best_ip = f32::NEG_INFINITY;
        for (l, c) in self.centroids.chunks_exact(self.dim).enumerate() {
            let ip = dot(v, c);
            if ip > best_ip {
                best_ip = ip;
                best = l;
            }
        }
        (best, best_ip)
    }

    /// Inner product of `q` with every centroid.
    pub fn centroid_scores(&self, q: &[f32]) -> Vec<f32> {
        self.centroids.chunks_exact(self.dim).map(|c| dot(q, c)).collect()
    }

    /// The `n_probe` lists with the largest centroid inner product, best
    /// first, plus that inner product.
    pub fn probe(&self, q: &[f32], n_probe: usize) -> Vec<(usize, f32)> {
        let scores = self.centroid_scores(q);
        let mut order: Vec<usize> = (0..self.n_lists).collect();
        let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
        let n_probe = n_probe.min(self.n_lists);
        if n_probe < self.n_lists {
            order.select_nth_unstable_by(n_probe, cmp);
            order.truncate(n_probe);
        }
        order.sort_by(cmp);
        order.into_iter().map(|l| (l, scores[l])).collect()
    }
}
