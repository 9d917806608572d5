//! Partition-only refresh: re-cluster a stratified sample of the indexed
//! vectors and re-encode everything against the new centroids. The quantizer
//! and rotation are never touched.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::IvfTqIndex;
use crate::linalg::{dot, normalized};
use crate::partition::{train_partition, DEFAULT_KMEANS_ITERS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefreshPolicy {
    pub trigger_every_n: usize,
    /// `None` picks `min(n, max(100 L, n / 10))`.
    pub sample_size: Option<usize>,
    pub use_raw_if_available: bool,
    pub seed: u64,
    pub kmeans_iters: usize,
}

impl Default for RefreshPolicy {
    fn default() -> Self {
        RefreshPolicy {
            trigger_every_n: 100_000,
            sample_size: None,
            use_raw_if_available: false,
            seed: 0,
            kmeans_iters: DEFAULT_KMEANS_ITERS,
        }
    }
}

impl RefreshPolicy {
    pub fn validate(&self, n_lists: usize) -> Result<()> {
        if self.trigger_every_n == 0 {
            return Err(Error::Config("trigger_every_n must be at least 1".into()));
        }
        if let Some(s) = self.sample_size {
            if s < n_lists {
                return Err(Error::Config(format!("sample_size {s} is below n_lists {n_lists}")));
            }
        }
        Ok(())
    }

    pub fn effective_sample_size(&self, n: usize, n_lists: usize) -> usize {
        self.sample_size.unwrap_or_else(|| (100 * n_lists).max(n / 10)).min(n)
    }

    /// True once `added_since_refresh` reaches the trigger.
    pub fn due(&self, added_since_refresh: usize) -> bool {
        added_since_refresh >= self.trigger_every_n
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DisplacementStats {
    /// Per new centroid, `1 - max_l <c_new, c_old_l>`.
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RefreshReport {
    pub duration_secs: f64,
    pub n_reassigned: usize,
    pub sample_size: usize,
    pub used_raw: bool,
    pub mean_assigned_ip_before: f64,
    pub mean_assigned_ip_after: f64,
    pub centroid_displacement: DisplacementStats,
}

/// Unit-norm source rows for every indexed vector, internal id order.
fn sources(index: &IvfTqIndex, use_raw: bool) -> Result<Vec<f32>> {
    let d = index.config().dim;
    let n = index.len();
    if use_raw {
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            out.extend_from_slice(index.raw_vector(i).expect("raw store present"));
        }
        return Ok(out);
    }
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        let x = index.reconstruct_vector(i)?;
        // A reconstruction can only vanish if centroid and residual cancel.
        match normalized(&x) {
            Some(u) => out.extend_from_slice(&u),
            None => out.extend_from_slice(index.partition().centroid(index.code(i)?.list_id as usize)),
        }
    }
    Ok(out)
}

pub fn refresh(index: &mut IvfTqIndex, policy: &RefreshPolicy) -> Result<RefreshReport> {
    let start = Instant::now();
    if index.config().flat {
        return Err(Error::Config("a flat index has no partition to refresh".into()));
    }
    let l = index.n_lists();
    policy.validate(l)?;
    let n = index.len();
    if n == 0 {
        return Ok(RefreshReport::default());
    }
    if n < l {
        return Err(Error::arg(format!("refresh needs at least n_lists={l} vectors, index holds {n}")));
    }
    let d = index.config().dim;
    let used_raw = policy.use_raw_if_available && index.has_raw();
    let src = sources(index, used_raw)?;

    let target = policy.effective_sample_size(n, l).max(l);
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut sample = Vec::with_capacity((target + l) * d);
    let mut sampled = 0usize;
    for members in &index.partition().lists {
        if members.is_empty() {
            continue;
        }
        let take = (target * members.len()).div_ceil(n).clamp(1, members.len());
        for pick in rand::seq::index::sample(&mut rng, members.len(), take).into_iter() {
            let id = members[pick] as usize;
            sample.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        sampled += take;
    }

    let before = index.mean_assigned_ip();
    let old = index.partition().centroids().to_vec();
    let partition = train_partition(&sample, d, l, policy.seed, policy.kmeans_iters)?;

    let mut disp = DisplacementStats::default();
    for c in partition.centroids().chunks_exact(d) {
        let best = old.chunks_exact(d).map(|o| dot(c, o)).fold(f32::NEG_INFINITY, f32::max);
        let v = 1.0 - best as f64;
        disp.mean += v;
        disp.max = disp.max.max(v);
    }
    disp.mean /= l as f64;

    index.reencode(partition, &src);
    Ok(RefreshReport {
        duration_secs: start.elapsed().as_secs_f64(),
        n_reassigned: n,
        sample_size: sampled,
        used_raw,
        mean_assigned_ip_before: before,
        mean_assigned_ip_after: index.mean_assigned_ip(),
        centroid_displacement: disp,
    })
}
