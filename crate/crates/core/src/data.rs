//! Dataset I/O (`.fvecs`, `.bvecs`, `.ivecs`), synthetic generators, and
//! streaming workload plans.

use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian as LE};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::normalized;
use crate::rotation::{generate_rotation, RotationMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VecsKind {
    F32,
    U8,
    I32,
}

impl VecsKind {
    pub fn elem_size(self) -> usize {
        match self {
            VecsKind::U8 => 1,
            VecsKind::F32 | VecsKind::I32 => 4,
        }
    }

    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "fvecs" => Some(VecsKind::F32),
            "bvecs" => Some(VecsKind::U8),
            "ivecs" => Some(VecsKind::I32),
            _ => None,
        }
    }
}

/// Layout summary of a vecs file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VecsFile {
    pub path: PathBuf,
    pub kind: VecsKind,
    pub dim: usize,
    pub count: usize,
}

/// Row-major matrix of `count x dim` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub dim: usize,
    pub data: Vec<T>,
}

impl<T> Matrix<T> {
    pub fn count(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Walks the records of a vecs image, calling `f` on each payload.
fn walk_records(bytes: &[u8], kind: VecsKind, max_rows: Option<usize>, mut f: impl FnMut(&[u8])) -> Result<usize> {
    let mut off = 0usize;
    let mut dim = None;
    let mut count = 0usize;
    while off < bytes.len() && max_rows.is_none_or(|m| count < m) {
        if off + 4 > bytes.len() {
            return Err(Error::format(format!("record {count} at byte {off}: truncated dimension header")));
        }
        let d = LE::read_i32(&bytes[off..off + 4]);
        if d <= 0 {
            return Err(Error::format(format!("record {count} at byte {off}: invalid dimension {d}")));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(prev) if prev != d => {
                return Err(Error::format(format!(
                    "record {count} at byte {off}: dimension {d} differs from {prev} in earlier records"
                )))
            }
            _ => {}
        }
        let len = d * kind.elem_size();
        if off + 4 + len > bytes.len() {
            return Err(Error::format(format!("record {count} at byte {off}: truncated payload")));
        }
        f(&bytes[off + 4..off + 4 + len]);
        off += 4 + len;
        count += 1;
    }
    Ok(dim.unwrap_or(0))
}

pub fn inspect_vecs(path: impl AsRef<Path>) -> Result<VecsFile> {
    let path = path.as_ref();
    let kind = VecsKind::from_path(path).ok_or_else(|| Error::arg(format!("unknown vecs extension: {}", path.display())))?;
    let bytes = std::fs::read(path)?;
    let mut count = 0;
    let dim = walk_records(&bytes, kind, None, |_| count += 1)?;
    Ok(VecsFile { path: path.to_path_buf(), kind, dim, count })
}

/// Reads `.fvecs` or `.bvecs` (widened) into `f32`, at most `max_rows` rows.
pub fn read_vectors(path: impl AsRef<Path>, max_rows: Option<usize>) -> Result<Matrix<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    match VecsKind::from_path(path) {
        Some(VecsKind::F32) => parse_fvecs(&bytes, max_rows),
        Some(VecsKind::U8) => parse_bvecs(&bytes, max_rows),
        _ => Err(Error::arg(format!("expected .fvecs or .bvecs: {}", path.display()))),
    }
}

pub fn parse_fvecs(bytes: &[u8], max_rows: Option<usize>) -> Result<Matrix<f32>> {
    let mut data = Vec::new();
    let dim = walk_records(bytes, VecsKind::F32, max_rows, |p| {
        data.extend(p.chunks_exact(4).map(LE::read_f32));
    })?;
    Ok(Matrix { dim, data })
}

pub fn parse_bvecs(bytes: &[u8], max_rows: Option<usize>) -> Result<Matrix<f32>> {
    let mut data = Vec::new();
    let dim = walk_records(bytes, VecsKind::U8, max_rows, |p| data.extend(p.iter().map(|&b| b as f32)))?;
    Ok(Matrix { dim, data })
}

pub fn parse_ivecs(bytes: &[u8], max_rows: Option<usize>) -> Result<Matrix<i32>> {
    let mut data = Vec::new();
    let dim = walk_records(bytes, VecsKind::I32, max_rows, |p| {
        data.extend(p.chunks_exact(4).map(LE::read_i32));
    })?;
    Ok(Matrix { dim, data })
}

pub fn read_fvecs(path: impl AsRef<Path>) -> Result<Matrix<f32>> {
    parse_fvecs(&std::fs::read(path)?, None)
}

pub fn read_bvecs(path: impl AsRef<Path>) -> Result<Matrix<f32>> {
    parse_bvecs(&std::fs::read(path)?, None)
}

pub fn read_ivecs(path: impl AsRef<Path>) -> Result<Matrix<i32>> {
    parse_ivecs(&std::fs::read(path)?, None)
}

fn write_records<T: Copy>(path: &Path, data: &[T], dim: usize, size: usize, put: impl Fn(T, &mut [u8])) -> Result<()> {
    if dim == 0 || !data.len().is_multiple_of(dim) {
        return Err(Error::arg("data is not a whole number of rows"));
    }
    let n = data.len() / dim;
    let mut out = vec![0u8; n * (4 + dim * size)];
    for (rec, row) in out.chunks_exact_mut(4 + dim * size).zip(data.chunks_exact(dim)) {
        LE::write_i32(&mut rec[..4], dim as i32);
        for (slot, &v) in rec[4..].chunks_exact_mut(size).zip(row) {
            put(v, slot);
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_fvecs(path: impl AsRef<Path>, data: &[f32], dim: usize) -> Result<()> {
    write_records(path.as_ref(), data, dim, 4, |v, s| LE::write_f32(s, v))
}

pub fn write_bvecs(path: impl AsRef<Path>, data: &[u8], dim: usize) -> Result<()> {
    write_records(path.as_ref(), data, dim, 1, |v, s| s[0] = v)
}

pub fn write_ivecs(path: impl AsRef<Path>, data: &[i32], dim: usize) -> Result<()> {
    write_records(path.as_ref(), data, dim, 4, |v, s| LE::write_i32(s, v))
}

/// Base vectors plus a held-out query set.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub dim: usize,
    pub base: Vec<f32>,
    pub queries: Vec<f32>,
}

impl Dataset {
    pub fn n_base(&self) -> usize {
        self.base.len() / self.dim
    }

    pub fn n_queries(&self) -> usize {
        self.queries.len() / self.dim
    }

    /// Loads `<dir>/<prefix>_base.fvecs` and `<dir>/<prefix>_query.fvecs`.
    pub fn load_pair(dir: impl AsRef<Path>, prefix: &str, max_base: Option<usize>, max_queries: Option<usize>) -> Result<Self> {
        let dir = dir.as_ref();
        let base = read_vectors(dir.join(format!("{prefix}_base.fvecs")), max_base)?;
        let queries = read_vectors(dir.join(format!("{prefix}_query.fvecs")), max_queries)?;
        if base.dim != queries.dim {
            return Err(Error::format("base and query files disagree on dimension"));
        }
        Ok(Dataset { name: prefix.to_string(), dim: base.dim, base: base.data, queries: queries.data })
    }
}

fn gaussian_vec(rng: &mut impl Rng, d: usize) -> Vec<f32> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Data generators draw from their own ChaCha stream. Rotations and k-means
/// seed stream 0 with the same integer seeds, and a shared stream would
/// make the generated centres rows of the rotation's Gaussian draw.
fn generator_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `k` random unit centres; point `i` belongs to cluster `i mod k` and is
/// `normalize(centre + spread * g)` with `g ~ N(0, I/d)`, so `spread` is
/// roughly the noise norm. Returns rows and labels.
pub fn make_synthetic_clusters(n: usize, d: usize, k: usize, spread: f32, seed: u64) -> Result<(Vec<f32>, Vec<u32>)> {
    if k == 0 || d == 0 {
        return Err(Error::arg("need at least one cluster and one dimension"));
    }
    let mut rng = generator_rng(seed, 1);
    let mut centres = Vec::with_capacity(k * d);
    while centres.len() < k * d {
        if let Some(c) = normalized(&gaussian_vec(&mut rng, d)) {
            centres.extend_from_slice(&c);
        }
    }
    let scale = spread / (d as f32).sqrt();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = &centres[(i % k) * d..(i % k + 1) * d];
        loop {
            let g = gaussian_vec(&mut rng, d);
            let x: Vec<f32> = c.iter().zip(&g).map(|(c, g)| c + scale * g).collect();
            if let Some(u) = normalized(&x) {
                data.extend_from_slice(&u);
                break;
            }
        }
        labels.push((i % k) as u32);
    }
    Ok((data, labels))
}

/// Knobs of the SIFT-like generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiftLikeParams {
    pub dim: usize,
    /// Top-level modes of the mixture.
    pub topics: usize,
    /// Rank of each topic's local variation.
    pub rank: usize,
    /// Shape of the gamma law for topic centres (small = sparse, peaky).
    pub centre_shape: f64,
    /// Scale of the low-rank variation relative to the centre.
    pub factor_scale: f32,
    /// Per-coordinate isotropic noise.
    pub noise: f32,
}

impl Default for SiftLikeParams {
    fn default() -> Self {
        SiftLikeParams { dim: 128, topics: 8, rank: 12, centre_shape: 0.6, factor_scale: 0.8, noise: 0.1 }
    }
}

/// Nonnegative byte-valued descriptors with a heavy-tailed mixture structure
/// (SIFT-like): each row is `relu(centre_t + A_t z + noise)` rescaled to a
/// norm of 512, clipped at 255 and rounded. Topics have Zipf-like weights.
/// Queries are fresh draws from the same law.
pub fn make_sift_like(n_base: usize, n_queries: usize, params: SiftLikeParams, seed: u64) -> Result<Dataset> {
    let d = params.dim;
    if d < 2 || params.topics == 0 {
        return Err(Error::arg("SIFT-like generator needs dim >= 2 and at least one topic"));
    }
    let mut rng = generator_rng(seed, 2);
    let gamma = Gamma::new(params.centre_shape, 1.0).map_err(|e| Error::arg(e.to_string()))?;
    let mut centres = Vec::with_capacity(params.topics * d);
    let mut factors = Vec::with_capacity(params.topics * d * params.rank);
    for _ in 0..params.topics {
        let c: Vec<f32> = (0..d).map(|_| gamma.sample(&mut rng) as f32).collect();
        let cn = crate::linalg::norm(&c).max(1e-6);
        centres.extend(c.iter().map(|v| v / cn));
        let s = params.factor_scale / ((d * params.rank) as f32).sqrt();
        for _ in 0..d * params.rank {
            let g: f32 = StandardNormal.sample(&mut rng);
            factors.push(g * s);
        }
    }
    let weights: Vec<f64> = (0..params.topics).map(|t| 1.0 / (t as f64 + 10.0)).collect();
    let total: f64 = weights.iter().sum();
    let cdf: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w / total;
            Some(*acc)
        })
        .collect();
    let noise = params.noise / (d as f32).sqrt();
    let draw = |rng: &mut ChaCha8Rng, out: &mut Vec<f32>| loop {
        let u: f64 = rng.random();
        let t = cdf.partition_point(|&c| c < u).min(params.topics - 1);
        let c = &centres[t * d..(t + 1) * d];
        let a = &factors[t * d * params.rank..(t + 1) * d * params.rank];
        let z: Vec<f32> = gaussian_vec(rng, params.rank);
        let mut x = vec![0.0f32; d];
        for (j, xj) in x.iter_mut().enumerate() {
            let lat: f32 = a[j * params.rank..(j + 1) * params.rank].iter().zip(&z).map(|(a, z)| a * z).sum();
            let e: f32 = StandardNormal.sample(rng);
            *xj = (c[j] + lat + noise * e).max(0.0);
        }
        let n = crate::linalg::norm(&x);
        if n <= 0.0 {
            continue;
        }
        let bytes: Vec<f32> = x.iter().map(|v| (v * 512.0 / n).min(255.0).round()).collect();
        if bytes.iter().any(|&b| b > 0.0) {
            out.extend_from_slice(&bytes);
            return;
        }
    };
    let mut base = Vec::with_capacity(n_base * d);
    for _ in 0..n_base {
        draw(&mut rng, &mut base);
    }
    let mut queries = Vec::with_capacity(n_queries * d);
    for _ in 0..n_queries {
        draw(&mut rng, &mut queries);
    }
    Ok(Dataset { name: "sift-like".into(), dim: d, base, queries })
}

/// Deep-descriptor-like data: unit-norm rows of a 96-d Gaussian mixture
/// with anisotropic per-cluster spread.
pub fn make_deep_like(n_base: usize, n_queries: usize, seed: u64) -> Result<Dataset> {
    let d = 96;
    let k = 100;
    let mut rng = generator_rng(seed, 3);
    let mut centres = Vec::with_capacity(k * d);
    let mut scales = Vec::with_capacity(k * d);
    for _ in 0..k {
        centres.extend(gaussian_vec(&mut rng, d));
        for _ in 0..d {
            scales.push(rng.random_range(0.3f32..1.2));
        }
    }
    let draw = |rng: &mut ChaCha8Rng, out: &mut Vec<f32>| loop {
        let t = rng.random_range(0..k);
        let x: Vec<f32> = (0..d)
            .map(|j| {
                let g: f32 = StandardNormal.sample(rng);
                centres[t * d + j] + scales[t * d + j] * g
            })
            .collect();
        if let Some(u) = normalized(&x) {
            out.extend_from_slice(&u);
            return;
        }
    };
    let mut base = Vec::with_capacity(n_base * d);
    for _ in 0..n_base {
        draw(&mut rng, &mut base);
    }
    let mut queries = Vec::with_capacity(n_queries * d);
    for _ in 0..n_queries {
        draw(&mut rng, &mut queries);
    }
    Ok(Dataset { name: "deep-like".into(), dim: d, base, queries })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamOrder {
    Original,
    Shuffled,
    /// Batch `i` (1-based) is pushed by `i * rate` along a fixed unit
    /// direction and renormalized.
    MeanShift { rate: f32 },
    /// Streamed rows are multiplied by a seeded random orthogonal matrix.
    RotationShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamPlan {
    pub train_count: usize,
    pub batch_size: usize,
    pub n_batches: usize,
    pub order: StreamOrder,
    pub seed: u64,
}

impl StreamPlan {
    pub fn total(&self) -> usize {
        self.train_count + self.batch_size * self.n_batches
    }
}

/// A materialized stream: normalized training rows and batches.
#[derive(Debug, Clone)]
pub struct Stream {
    pub dim: usize,
    pub train: Vec<f32>,
    pub batches: Vec<Vec<f32>>,
    /// Dataset row behind each streamed row, training rows first.
    pub source_rows: Vec<usize>,
    shift: Option<RotationMatrix>,
}

impl Stream {
    /// Maps queries into the space the streamed rows live in. Identity
    /// except under a rotation shift.
    pub fn transform_queries(&self, queries: &[f32]) -> Result<Vec<f32>> {
        match &self.shift {
            None => Ok(queries.to_vec()),
            Some(r) => {
                let mut out = Vec::with_capacity(queries.len());
                for q in queries.chunks_exact(self.dim) {
                    out.extend(r.rotate(q)?);
                }
                Ok(out)
            }
        }
    }

    pub fn shift_rotation(&self) -> Option<&RotationMatrix> {
        self.shift.as_ref()
    }
}

/// Keeps the shift rotation distinct from index rotations drawn with the
/// same user seed.
const SHIFT_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Normalizes and splits `base` rows according to `plan`.
pub fn make_stream(base: &[f32], dim: usize, plan: &StreamPlan) -> Result<Stream> {
    if dim == 0 || !base.len().is_multiple_of(dim) {
        return Err(Error::arg("dataset is not a whole number of rows"));
    }
    let n = base.len() / dim;
    if plan.total() > n {
        return Err(Error::arg(format!("stream plan needs {} rows but the dataset has {n}", plan.total())));
    }
    if plan.batch_size == 0 && plan.n_batches > 0 {
        return Err(Error::arg("batch_size must be positive"));
    }
    let mut rows: Vec<usize> = (0..plan.total()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    if plan.order == StreamOrder::Shuffled {
        rows.shuffle(&mut rng);
    }
    let unit = |i: usize| -> Result<Vec<f32>> {
        normalized(&base[i * dim..(i + 1) * dim]).ok_or(Error::ZeroNorm { row: i })
    };
    let mut train = Vec::with_capacity(plan.train_count * dim);
    for &i in &rows[..plan.train_count] {
        train.extend(unit(i)?);
    }
    let shift = match plan.order {
        StreamOrder::RotationShift => Some(generate_rotation(dim, plan.seed ^ SHIFT_SEED_SALT)?),
        _ => None,
    };
    let direction = match plan.order {
        StreamOrder::MeanShift { rate } => {
            if !(rate >= 0.0) {
                return Err(Error::arg(format!("mean-shift rate must be nonnegative, got {rate}")));
            }
            loop {
                if let Some(u) = normalized(&gaussian_vec(&mut rng, dim)) {
                    break Some((u, rate));
                }
            }
        }
        _ => None,
    };
    let mut batches = Vec::with_capacity(plan.n_batches);
    for b in 0..plan.n_batches {
        let start = plan.train_count + b * plan.batch_size;
        let mut batch = Vec::with_capacity(plan.batch_size * dim);
        for &i in &rows[start..start + plan.batch_size] {
            let x = unit(i)?;
            let x = if let Some(r) = &shift {
                r.rotate(&x)?
            } else if let Some((u, rate)) = &direction {
                let step = (b + 1) as f32 * rate;
                let moved: Vec<f32> = x.iter().zip(u).map(|(x, u)| x + step * u).collect();
                normalized(&moved).ok_or(Error::ZeroNorm { row: i })?
            } else {
                x
            };
            batch.extend(x);
        }
        batches.push(batch);
    }
    Ok(Stream { dim, train, batches, source_rows: rows, shift })
}
