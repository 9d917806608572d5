//! Ground truth, recall, multi-seed statistics, and empirical checks of the
//! quantizer's theoretical guarantees.

use std::hash::{DefaultHasher, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::index::IvfTqIndex;
use crate::linalg::{dot, normalize_rows};
use crate::lloydmax::ScalarQuantizer;
use crate::rotation::RotationMatrix;
use crate::topk::TopK;

/// Identifies a database state: row count plus a running digest of every
/// row added so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct StateTag {
    pub count: u64,
    pub digest: u64,
}

impl StateTag {
    pub fn empty() -> Self {
        StateTag { count: 0, digest: 0 }
    }

    /// Chained per row, so the tag does not depend on how rows were batched.
    pub fn extend(self, rows: &[f32], dim: usize) -> Self {
        let mut digest = self.digest;
        for row in rows.chunks_exact(dim) {
            let mut h = DefaultHasher::new();
            h.write_u64(digest);
            for v in row {
                h.write_u32(v.to_bits());
            }
            digest = h.finish();
        }
        StateTag { count: self.count + (rows.len() / dim) as u64, digest }
    }

    pub fn of(rows: &[f32], dim: usize) -> Self {
        Self::empty().extend(rows, dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub k: usize,
    /// Per query, best first. Ids are row indices of the database.
    pub ids: Vec<Vec<u64>>,
    pub state: StateTag,
}

impl GroundTruth {
    /// Errors unless the truth was computed for `state`.
    pub fn check_state(&self, state: StateTag) -> Result<()> {
        if self.state != state {
            return Err(Error::Config(format!(
                "ground truth is for {} rows (digest {:x}) but the database has {} rows (digest {:x})",
                self.state.count, self.state.digest, state.count, state.digest
            )));
        }
        Ok(())
    }
}

/// Exhaustive inner-product top-k over normalized rows; ties go to the lower
/// id.
pub fn exact_topk(database: &[f32], queries: &[f32], dim: usize, k: usize) -> Result<GroundTruth> {
    if database.is_empty() {
        return Err(Error::arg("ground truth needs a nonempty database"));
    }
    let mut inc = IncrementalTruth::new(queries, dim, k)?;
    inc.extend(database)?;
    Ok(inc.snapshot())
}

/// Exact top-k maintained as the database grows, so each row is scored
/// against the queries once.
#[derive(Debug, Clone)]
pub struct IncrementalTruth {
    dim: usize,
    k: usize,
    queries: Vec<f32>,
    tops: Vec<TopK>,
    state: StateTag,
}

impl IncrementalTruth {
    pub fn new(queries: &[f32], dim: usize, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::arg("k must be at least 1"));
        }
        let queries = normalize_rows(queries, dim)?;
        let nq = queries.len() / dim;
        Ok(IncrementalTruth { dim, k, queries, tops: vec![TopK::new(k); nq], state: StateTag::empty() })
    }

    /// Appends rows (normalized here) with ids continuing from the current
    /// count.
    pub fn extend(&mut self, rows: &[f32]) -> Result<()> {
        let unit = normalize_rows(rows, self.dim)?;
        let first = self.state.count as u32;
        let d = self.dim;
        for (qi, q) in self.queries.chunks_exact(d).enumerate() {
            let top = &mut self.tops[qi];
            for (i, x) in unit.chunks_exact(d).enumerate() {
                let s = dot(q, x);
                if top.threshold().is_some_and(|t| s < t) {
                    continue;
                }
                top.push(s, first + i as u32);
            }
        }
        self.state = self.state.extend(&unit, d);
        Ok(())
    }

    pub fn state(&self) -> StateTag {
        self.state
    }

    pub fn snapshot(&self) -> GroundTruth {
        let ids = self.tops.iter().map(|t| t.clone().into_sorted().into_iter().map(|(id, _)| id as u64).collect()).collect();
        GroundTruth { k: self.k, ids, state: self.state }
    }
}

/// Per-query `|results[..k] ∩ truth[..k]| / k`.
pub fn per_query_recall(results: &[Vec<u64>], truth: &[Vec<u64>], k: usize) -> Result<Vec<f64>> {
    if results.len() != truth.len() {
        return Err(Error::arg(format!("{} result lists for {} queries", results.len(), truth.len())));
    }
    if k == 0 {
        return Err(Error::arg("k must be at least 1"));
    }
    Ok(results
        .iter()
        .zip(truth)
        .map(|(r, t)| {
            let t = &t[..t.len().min(k)];
            let hits = r.iter().take(k).filter(|id| t.contains(id)).count();
            hits as f64 / k as f64
        })
        .collect())
}

pub fn recall_at_k(results: &[Vec<u64>], truth: &[Vec<u64>], k: usize) -> Result<f64> {
    let per = per_query_recall(results, truth, k)?;
    if per.is_empty() {
        return Ok(0.0);
    }
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Two-sided 97.5% Student-t quantiles for df = 1..=30.
const T975: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160, 2.145, 2.131, 2.120,
    2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
];

pub fn t_critical_95(df: usize) -> f64 {
    match df {
        0 => f64::INFINITY,
        1..=30 => T975[df - 1],
        _ => 1.96,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedStats {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
    /// Half-width of the 95% Student-t interval; 0 with a single value.
    pub ci95: f64,
}

impl SeedStats {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return SeedStats { values: Vec::new(), mean: f64::NAN, std: f64::NAN, ci95: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return SeedStats { values: values.to_vec(), mean, std: 0.0, ci95: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std = var.sqrt();
        SeedStats { values: values.to_vec(), mean, std, ci95: t_critical_95(n - 1) * std / (n as f64).sqrt() }
    }

    /// Statistics of the within-seed differences `a - b`.
    pub fn paired(a: &[f64], b: &[f64]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::arg("paired statistics need equal-length samples"));
        }
        let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        Ok(Self::from_values(&diffs))
    }

    /// Standard error of the mean.
    pub fn sem(&self) -> f64 {
        if self.values.len() < 2 {
            0.0
        } else {
            self.std / (self.values.len() as f64).sqrt()
        }
    }
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Kolmogorov–Smirnov distance between a sample and `N(0, 1)`.
pub fn ks_statistic_normal(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = standard_normal_cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalReport {
    pub dim: usize,
    pub n_trials: usize,
    pub ks_statistic: f64,
}

/// Trial `t` rotates a fresh sparse nonnegative unit vector (four random
/// nonzero coordinates) and keeps coordinate `t mod d`, scaled by `sqrt(d)`.
/// A Haar rotation spreads such inputs into near-Gaussian coordinates.
pub fn verify_marginal(rot: &RotationMatrix, n_trials: usize, seed: u64) -> MarginalReport {
    let d = rot.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coord = Uniform::new(0, d).expect("dim >= 2");
    let weight = Uniform::new(0.05f64, 1.0).expect("valid range");
    let scale = (d as f64).sqrt();
    let mut samples = Vec::with_capacity(n_trials);
    let mut v = vec![0.0f64; d];
    for t in 0..n_trials {
        v.iter_mut().for_each(|x| *x = 0.0);
        for _ in 0..4.min(d) {
            v[coord.sample(&mut rng)] += weight.sample(&mut rng);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let j = t % d;
        let row = rot.row(j);
        let y: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / n;
        samples.push(y * scale);
    }
    MarginalReport { dim: d, n_trials, ks_statistic: ks_statistic_normal(&samples) }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem1Report {
    pub dim: usize,
    pub bits: u32,
    pub n_trials: usize,
    pub delta: f64,
    pub mean_error: f64,
    pub mean_squared_error: f64,
    /// Empirical `1 - delta` quantile of `||v_hat - v||`.
    pub empirical_quantile: f64,
    pub sqrt_distortion: f64,
    pub concentration_term: f64,
    /// `sqrt(D_b) + sqrt(8 ln(2/delta) / (d - 2))`; the `O(1/sqrt(d))`
    /// remainder is left out.
    pub bound: f64,
    pub holds: bool,
}

/// Reconstruction error of `P^T C_b(P v)` over random unit vectors.
pub fn verify_theorem1(
    quantizer: &ScalarQuantizer,
    rot: &RotationMatrix,
    n_trials: usize,
    delta: f64,
    use_sign: bool,
    seed: u64,
) -> Result<Theorem1Report> {
    let d = rot.dim();
    if quantizer.dim() != d {
        return Err(Error::DimensionMismatch { expected: quantizer.dim(), got: d });
    }
    if d < 3 {
        return Err(Error::arg("the concentration term needs d > 2"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::arg(format!("delta must be in (0, 1), got {delta}")));
    }
    if n_trials == 0 {
        return Err(Error::arg("need at least one trial"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        let t = rot.rotate_f64(&v)?;
        let q: Vec<f64> = t
            .iter()
            .map(|&x| {
                let (bin, sign) = quantizer.quantize_coord(x);
                quantizer.value(bin, sign, use_sign)
            })
            .collect();
        let back = rot.rotate_inverse_f64(&q)?;
        errors.push(back.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
    }
    let mean_error = errors.iter().sum::<f64>() / n_trials as f64;
    let mean_squared_error = errors.iter().map(|e| e * e).sum::<f64>() / n_trials as f64;
    errors.sort_by(|a, b| a.total_cmp(b));
    let rank = (((1.0 - delta) * n_trials as f64).ceil() as usize).clamp(1, n_trials) - 1;
    let empirical_quantile = errors[rank];
    let dist = if use_sign { quantizer.distortion_sign() } else { quantizer.distortion() };
    let sqrt_distortion = dist.sqrt();
    let concentration_term = (8.0 * (2.0 / delta).ln() / (d as f64 - 2.0)).sqrt();
    let bound = sqrt_distortion + concentration_term;
    Ok(Theorem1Report {
        dim: d,
        bits: quantizer.bits(),
        n_trials,
        delta,
        mean_error,
        mean_squared_error,
        empirical_quantile,
        sqrt_distortion,
        concentration_term,
        bound,
        holds: empirical_quantile <= bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmplificationReport {
    pub n_vectors: usize,
    pub n_queries: usize,
    pub mean_assigned_ip: f64,
    /// `2 (1 - mean_assigned_ip)`.
    pub predicted_ratio: f64,
    pub mse_ivf: f64,
    pub mse_flat: f64,
    pub measured_ratio: f64,
    /// Mean `||x - c||^2` over the database.
    pub mean_residual_sq: f64,
    /// Largest `| ||x - c||^2 - (2 - 2<x, c>) |` over the database.
    pub max_identity_error: f64,
}

/// Compares squared inner-product estimation errors of an IVF index and a
/// flat index holding the same unit rows `data` (internal id order).
pub fn verify_amplification(
    ivf: &IvfTqIndex,
    flat: &IvfTqIndex,
    data: &[f32],
    queries: &[f32],
) -> Result<AmplificationReport> {
    let d = ivf.config().dim;
    if !flat.config().flat || ivf.config().flat {
        return Err(Error::Config("need one IVF index and one flat index".into()));
    }
    let n = data.len() / d;
    if ivf.len() != n || flat.len() != n {
        return Err(Error::arg("both indexes must hold exactly the given rows"));
    }
    let mut ip_sum = 0.0;
    let mut r2_sum = 0.0;
    let mut max_identity_error: f64 = 0.0;
    for (i, x) in data.chunks_exact(d).enumerate() {
        let c = ivf.partition().centroid(ivf.code(i)?.list_id as usize);
        let ip: f64 = x.iter().zip(c).map(|(&a, &b)| a as f64 * b as f64).sum();
        let r2: f64 = x.iter().zip(c).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
        let nx: f64 = x.iter().map(|&a| (a as f64).powi(2)).sum();
        let nc: f64 = c.iter().map(|&a| (a as f64).powi(2)).sum();
        // Exact for any vectors; reduces to 2 - 2<x, c> on the unit sphere.
        let general = nx + nc - 2.0 * ip;
        max_identity_error = max_identity_error.max((r2 - general).abs()).max((r2 - (2.0 - 2.0 * ip)).abs());
        ip_sum += ip;
        r2_sum += r2;
    }
    let mean_ip = ip_sum / n as f64;
    let unit_q = normalize_rows(queries, d)?;
    let mut se_ivf = 0.0;
    let mut se_flat = 0.0;
    for q in unit_q.chunks_exact(d) {
        let est_ivf = ivf.estimate_all(q)?;
        let est_flat = flat.estimate_all(q)?;
        for (i, x) in data.chunks_exact(d).enumerate() {
            let exact = dot(q, x) as f64;
            se_ivf += (est_ivf[i] as f64 - exact).powi(2);
            se_flat += (est_flat[i] as f64 - exact).powi(2);
        }
    }
    let count = (n * (unit_q.len() / d)) as f64;
    let (mse_ivf, mse_flat) = (se_ivf / count, se_flat / count);
    Ok(AmplificationReport {
        n_vectors: n,
        n_queries: unit_q.len() / d,
        mean_assigned_ip: mean_ip,
        predicted_ratio: 2.0 * (1.0 - mean_ip),
        mse_ivf,
        mse_flat,
        measured_ratio: if mse_flat > 0.0 { mse_ivf / mse_flat } else { 0.0 },
        mean_residual_sq: r2_sum / n as f64,
        max_identity_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recall_cases() {
        let t = vec![vec![1, 2, 3, 4]];
        assert_eq!(recall_at_k(&t, &t, 4).unwrap(), 1.0);
        assert_eq!(recall_at_k(&[vec![5, 6, 7, 8]], &t, 4).unwrap(), 0.0);
        assert_eq!(recall_at_k(&[vec![1, 9, 2, 8]], &t, 4).unwrap(), 0.5);
        assert!(recall_at_k(&[], &t, 4).is_err());
    }

    #[test]
    fn t_table() {
        assert_eq!(t_critical_95(2), 4.303);
        let s = SeedStats::from_values(&[1.0, 2.0, 3.0]);
        assert!((s.mean - 2.0).abs() < 1e-12);
        assert!((s.std - 1.0).abs() < 1e-12);
        assert!((s.ci95 - 4.303 / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        // Midpoint quantiles give the minimum possible statistic 1/(2n).
        let n = 1000;
        let xs: Vec<f64> = (0..n)
            .map(|i| {
                let p = (i as f64 + 0.5) / n as f64;
                let (mut lo, mut hi) = (-10.0, 10.0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if standard_normal_cdf(mid) < p {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            })
            .collect();
        assert!((ks_statistic_normal(&xs) - 0.5 / n as f64).abs() < 1e-9);
    }

    #[test]
    fn state_tag_tracks_content() {
        let a = StateTag::of(&[1.0, 2.0], 2);
        assert_eq!(a, StateTag::of(&[1.0, 2.0], 2));
        assert_ne!(a, StateTag::of(&[1.0, 2.5], 2));
        assert_eq!(a.extend(&[3.0, 4.0], 2), StateTag::of(&[1.0, 2.0, 3.0, 4.0], 2));
    }
}
