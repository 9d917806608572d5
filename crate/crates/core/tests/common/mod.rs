#![allow(dead_code)]

use std::sync::OnceLock;

use ivftq::data::{make_sift_like, Dataset, SiftLikeParams};
use ivftq::linalg::normalize_rows;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const D: usize = 128;

/// SIFT-like 10K base / 100 queries, the same draw the `siftsmall` preset uses.
pub fn sift10k() -> &'static Dataset {
    static DS: OnceLock<Dataset> = OnceLock::new();
    DS.get_or_init(|| make_sift_like(10_000, 100, SiftLikeParams::default(), 42).unwrap())
}

pub fn sift10k_unit() -> &'static [f32] {
    static U: OnceLock<Vec<f32>> = OnceLock::new();
    U.get_or_init(|| normalize_rows(&sift10k().base, D).unwrap())
}

pub fn gaussian_rows(n: usize, d: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub fn unit_gaussian_rows(n: usize, d: usize, seed: u64) -> Vec<f32> {
    normalize_rows(&gaussian_rows(n, d, seed), d).unwrap()
}

pub fn dot64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Standard normal CDF from `erfc`, independent of the crate's own helper.
pub fn phi_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn phi_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Two-sided one-sample Kolmogorov-Smirnov distance to N(0, 1).
pub fn ks_normal(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0f64, |acc, (i, &x)| {
        let f = phi_cdf(x);
        acc.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    })
}

pub fn ids_of(results: Vec<ivftq::SearchResult>) -> Vec<Vec<u64>> {
    results.into_iter().map(|r| r.ids).collect()
}

pub fn normalize(v: &[f32]) -> Vec<f32> {
    ivftq::linalg::normalized(v).unwrap()
}
