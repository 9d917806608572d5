//! IVF-PQ baseline with inner-product asymmetric distance: residuals to the
//! coarse centroid are split into `m` sub-blocks, each coded by a 256-entry
//! Euclidean k-means codebook.

use std::io::{Cursor, Write};
use std::path::Path;
use std::time::Instant;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::index::persist::{check_remaining, read_bytes, read_f32s, truncated};
use crate::index::SearchResult;
use crate::kmeans::{kmeans, KMeansParams, Metric, NearestL2};
use crate::linalg::{check_dim, dot, normalize_rows, normalized};
use crate::partition::{train_partition, CoarsePartition, DEFAULT_KMEANS_ITERS};
use crate::topk::TopK;

pub const PQ_KS: usize = 256;
/// Training rows beyond this are subsampled (256 per centroid).
pub const DEFAULT_MAX_TRAIN_POINTS: usize = 256 * PQ_KS;

const MAGIC: &[u8; 4] = b"IVPQ";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PqParams {
    pub m: usize,
    pub seed: u64,
    pub iters: usize,
    pub max_train_points: usize,
}

impl PqParams {
    pub fn new(m: usize, seed: u64) -> Self {
        PqParams { m, seed, iters: DEFAULT_KMEANS_ITERS, max_train_points: DEFAULT_MAX_TRAIN_POINTS }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PqCodebook {
    m: usize,
    dim: usize,
    /// `m x 256 x sub_dim`.
    centroids: Vec<f32>,
    trained_on: usize,
}

pub fn pq_train(residuals: &[f32], dim: usize, params: PqParams) -> Result<PqCodebook> {
    let m = params.m;
    if m == 0 || !dim.is_multiple_of(m) {
        return Err(Error::arg(format!("dimension {dim} is not divisible by m={m}")));
    }
    if !residuals.len().is_multiple_of(dim) {
        return Err(Error::arg("residuals are not a whole number of rows"));
    }
    let n = residuals.len() / dim;
    if n < PQ_KS {
        return Err(Error::arg(format!("PQ training needs at least {PQ_KS} vectors, got {n}")));
    }
    let rows: Vec<usize> = if n > params.max_train_points {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed_5a3b);
        let mut pick = rand::seq::index::sample(&mut rng, n, params.max_train_points).into_vec();
        pick.sort_unstable();
        pick
    } else {
        (0..n).collect()
    };
    let sub = dim / m;
    let mut centroids = Vec::with_capacity(m * PQ_KS * sub);
    let mut block = vec![0.0f32; rows.len() * sub];
    for j in 0..m {
        for (dst, &i) in block.chunks_exact_mut(sub).zip(&rows) {
            dst.copy_from_slice(&residuals[i * dim + j * sub..i * dim + (j + 1) * sub]);
        }
        let kp = KMeansParams { k: PQ_KS, max_iters: params.iters, seed: params.seed.wrapping_add(j as u64) };
        let out = kmeans(&block, sub, kp, Metric::Euclidean)?;
        centroids.extend_from_slice(&out.centroids);
    }
    Ok(PqCodebook { m, dim, centroids, trained_on: rows.len() })
}

impl PqCodebook {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sub_dim(&self) -> usize {
        self.dim / self.m
    }

    pub fn trained_on(&self) -> usize {
        self.trained_on
    }

    pub fn sub_centroid(&self, j: usize, c: usize) -> &[f32] {
        let s = self.sub_dim();
        let off = (j * PQ_KS + c) * s;
        &self.centroids[off..off + s]
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn bits_per_vec(&self) -> u64 {
        self.m as u64 * 8
    }

    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.m as u64).to_le_bytes());
        h.update((self.dim as u64).to_le_bytes());
        for v in &self.centroids {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }

    fn encoders(&self) -> Vec<NearestL2> {
        let s = self.sub_dim();
        (0..self.m).map(|j| NearestL2::new(&self.centroids[j * PQ_KS * s..(j + 1) * PQ_KS * s], s)).collect()
    }

    pub fn encode(&self, residual: &[f32]) -> Vec<u8> {
        let enc = self.encoders();
        let mut out = vec![0u8; self.m];
        let mut scratch = vec![0.0f32; PQ_KS];
        encode_with(&enc, self.sub_dim(), residual, &mut out, &mut scratch);
        out
    }

    pub fn decode(&self, code: &[u8]) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.dim);
        for (j, &c) in code.iter().enumerate() {
            out.extend_from_slice(self.sub_centroid(j, c as usize));
        }
        out
    }

    /// Mean squared reconstruction error per vector over `residuals`.
    pub fn distortion(&self, residuals: &[f32]) -> f64 {
        let n = residuals.len() / self.dim;
        if n == 0 {
            return 0.0;
        }
        let enc = self.encoders();
        let mut code = vec![0u8; self.m];
        let mut scratch = vec![0.0f32; PQ_KS];
        let mut acc = 0.0;
        for r in residuals.chunks_exact(self.dim) {
            encode_with(&enc, self.sub_dim(), r, &mut code, &mut scratch);
            acc += crate::linalg::squared_l2(r, &self.decode(&code)) as f64;
        }
        acc / n as f64
    }

    /// `m x 256` table of `<q_j, c_{j,c}>`.
    pub fn lookup_table(&self, q: &[f32]) -> Vec<f32> {
        let s = self.sub_dim();
        let mut lut = Vec::with_capacity(self.m * PQ_KS);
        for j in 0..self.m {
            let qj = &q[j * s..(j + 1) * s];
            for c in 0..PQ_KS {
                lut.push(dot(qj, self.sub_centroid(j, c)));
            }
        }
        lut
    }
}

fn encode_with(enc: &[NearestL2], sub: usize, residual: &[f32], out: &mut [u8], scratch: &mut [f32]) {
    for (j, e) in enc.iter().enumerate() {
        out[j] = e.nearest(&residual[j * sub..(j + 1) * sub], scratch) as u8;
    }
}

#[derive(Debug, Clone)]
pub struct IvfPqIndex {
    partition: CoarsePartition,
    codebook: PqCodebook,
    /// Codes per list, `m` bytes each, parallel to `partition.lists`.
    codes: Vec<Vec<u8>>,
    /// Normalized inputs, internal id order.
    raw: Vec<f32>,
    external_ids: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrainStats {
    pub seconds: f64,
    pub trained_on: usize,
    pub reencoded: usize,
}

impl IvfPqIndex {
    /// Normalizes `training`, trains the partition and the codebook on it,
    /// and adds every row with external ids `0..n`.
    pub fn build(training: &[f32], dim: usize, n_lists: usize, kmeans_seed: u64, params: PqParams) -> Result<Self> {
        let unit = normalize_rows(training, dim)?;
        let partition = train_partition(&unit, dim, n_lists, kmeans_seed, DEFAULT_KMEANS_ITERS)?;
        Self::build_on_partition(&unit, partition, params)
    }

    /// Trains the codebook on the residuals of unit rows under `partition`
    /// and adds the rows.
    pub fn build_on_partition(unit: &[f32], mut partition: CoarsePartition, params: PqParams) -> Result<Self> {
        let dim = partition.dim();
        if params.m == 0 || !dim.is_multiple_of(params.m) {
            return Err(Error::arg(format!("dimension {dim} is not divisible by m={}", params.m)));
        }
        partition.clear_lists();
        let residuals = residuals_of(&partition, unit);
        let codebook = pq_train(&residuals, dim, params)?;
        let mut index = Self::with_parts(partition, codebook)?;
        index.add_unit_batch(unit, 0);
        Ok(index)
    }

    pub fn with_parts(mut partition: CoarsePartition, codebook: PqCodebook) -> Result<Self> {
        check_dim(partition.dim(), codebook.dim())?;
        partition.clear_lists();
        let codes = vec![Vec::new(); partition.n_lists()];
        Ok(IvfPqIndex { partition, codebook, codes, raw: Vec::new(), external_ids: Vec::new() })
    }

    pub fn dim(&self) -> usize {
        self.partition.dim()
    }

    pub fn len(&self) -> usize {
        self.external_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external_ids.is_empty()
    }

    pub fn partition(&self) -> &CoarsePartition {
        &self.partition
    }

    pub fn codebook(&self) -> &PqCodebook {
        &self.codebook
    }

    pub fn raw_vectors(&self) -> &[f32] {
        &self.raw
    }

    pub fn add(&mut self, x: &[f32], external_id: u64) -> Result<usize> {
        check_dim(self.dim(), x.len())?;
        let unit = normalized(x).ok_or_else(|| Error::arg("cannot add a zero vector"))?;
        let enc = self.codebook.encoders();
        let mut scratch = vec![0.0f32; PQ_KS];
        Ok(self.push(&unit, external_id, &enc, &mut scratch))
    }

    pub fn add_batch(&mut self, data: &[f32], first_id: u64) -> Result<std::ops::Range<usize>> {
        if !data.len().is_multiple_of(self.dim()) {
            return Err(Error::arg("batch is not a whole number of rows"));
        }
        let unit = normalize_rows(data, self.dim())?;
        let start = self.len();
        self.add_unit_batch(&unit, first_id);
        Ok(start..self.len())
    }

    fn add_unit_batch(&mut self, unit: &[f32], first_id: u64) {
        let enc = self.codebook.encoders();
        let mut scratch = vec![0.0f32; PQ_KS];
        for (i, row) in unit.chunks_exact(self.dim()).enumerate() {
            self.push(row, first_id + i as u64, &enc, &mut scratch);
        }
    }

    fn push(&mut self, unit: &[f32], external_id: u64, enc: &[NearestL2], scratch: &mut [f32]) -> usize {
        let id = self.external_ids.len();
        let (l, _) = self.partition.assign(unit);
        let c = self.partition.centroid(l);
        let r: Vec<f32> = unit.iter().zip(c).map(|(x, c)| x - c).collect();
        let mut code = vec![0u8; self.codebook.m];
        encode_with(enc, self.codebook.sub_dim(), &r, &mut code, scratch);
        self.partition.lists[l].push(id as u32);
        self.codes[l].extend_from_slice(&code);
        self.raw.extend_from_slice(unit);
        self.external_ids.push(external_id);
        id
    }

    /// Fresh codebook on the residuals of every stored vector, then every
    /// code is re-encoded. The partition is unchanged.
    pub fn retrain(&mut self, params: PqParams) -> Result<RetrainStats> {
        let start = Instant::now();
        if params.m != self.codebook.m {
            return Err(Error::Config("retrain must keep the sub-quantizer count".into()));
        }
        let residuals = residuals_of(&self.partition, &self.raw);
        let codebook = pq_train(&residuals, self.dim(), params)?;
        let enc = codebook.encoders();
        let mut scratch = vec![0.0f32; PQ_KS];
        let (d, m) = (self.dim(), codebook.m);
        let mut reencoded = 0;
        for (l, ids) in self.partition.lists.iter().enumerate() {
            for (p, &id) in ids.iter().enumerate() {
                let id = id as usize;
                encode_with(&enc, codebook.sub_dim(), &residuals[id * d..(id + 1) * d], &mut self.codes[l][p * m..(p + 1) * m], &mut scratch);
                reencoded += 1;
            }
        }
        let trained_on = codebook.trained_on;
        self.codebook = codebook;
        Ok(RetrainStats { seconds: start.elapsed().as_secs_f64(), trained_on, reencoded })
    }

    /// Refits the coarse partition (on at most `max_train_points` stored
    /// vectors) and then the codebook, and re-encodes everything.
    pub fn retrain_with_partition(&mut self, kmeans_seed: u64, params: PqParams) -> Result<RetrainStats> {
        let start = Instant::now();
        if params.m != self.codebook.m {
            return Err(Error::Config("retrain must keep the sub-quantizer count".into()));
        }
        let (d, n) = (self.dim(), self.len());
        let sample: Vec<f32> = if n > params.max_train_points {
            let mut rng = ChaCha8Rng::seed_from_u64(kmeans_seed ^ 0x5eed_5a3b);
            let mut pick = rand::seq::index::sample(&mut rng, n, params.max_train_points).into_vec();
            pick.sort_unstable();
            pick.iter().flat_map(|&i| self.raw[i * d..(i + 1) * d].iter().copied()).collect()
        } else {
            self.raw.clone()
        };
        let partition = train_partition(&sample, d, self.partition.n_lists(), kmeans_seed, DEFAULT_KMEANS_ITERS)?;
        let residuals = residuals_of(&partition, &self.raw);
        let codebook = pq_train(&residuals, d, params)?;
        let raw = std::mem::take(&mut self.raw);
        let ids = std::mem::take(&mut self.external_ids);
        *self = Self::with_parts(partition, codebook)?;
        let enc = self.codebook.encoders();
        let mut scratch = vec![0.0f32; PQ_KS];
        for (row, &id) in raw.chunks_exact(d).zip(&ids) {
            self.push(row, id, &enc, &mut scratch);
        }
        Ok(RetrainStats { seconds: start.elapsed().as_secs_f64(), trained_on: self.codebook.trained_on, reencoded: n })
    }

    fn clamp_probe(&self, n_probe: usize) -> Result<usize> {
        if n_probe == 0 {
            return Err(Error::arg("n_probe must be at least 1"));
        }
        let l = self.partition.n_lists();
        if n_probe > l {
            log::warn!("n_probe {n_probe} exceeds the {l} lists; clamping");
        }
        Ok(n_probe.min(l))
    }

    pub fn candidates(&self, q: &[f32], n_probe: usize) -> Result<Vec<u32>> {
        check_dim(self.dim(), q.len())?;
        let n_probe = self.clamp_probe(n_probe)?;
        let unit = normalized(q).ok_or_else(|| Error::arg("query has zero norm"))?;
        let mut out = Vec::new();
        for (l, _) in self.partition.probe(&unit, n_probe) {
            out.extend_from_slice(&self.partition.lists[l]);
        }
        Ok(out)
    }

    pub fn search(&self, q: &[f32], k: usize, n_probe: usize) -> Result<SearchResult> {
        check_dim(self.dim(), q.len())?;
        if k == 0 {
            return Err(Error::arg("k must be at least 1"));
        }
        let n_probe = self.clamp_probe(n_probe)?;
        let unit = normalized(q).ok_or_else(|| Error::arg("query has zero norm"))?;
        let lut = self.codebook.lookup_table(&unit);
        let m = self.codebook.m;
        let mut top = TopK::new(k);
        for (l, coarse) in self.partition.probe(&unit, n_probe) {
            for (code, &id) in self.codes[l].chunks_exact(m).zip(&self.partition.lists[l]) {
                let mut acc = [0.0f32; 4];
                for (j, &c) in code.iter().enumerate() {
                    acc[j & 3] += lut[j * PQ_KS + c as usize];
                }
                top.push(coarse + (acc[0] + acc[1]) + (acc[2] + acc[3]), id);
            }
        }
        let hits = top.into_sorted();
        Ok(SearchResult {
            ids: hits.iter().map(|&(id, _)| self.external_ids[id as usize]).collect(),
            scores: hits.iter().map(|&(_, s)| s).collect(),
        })
    }

    pub fn search_batch(&self, queries: &[f32], k: usize, n_probe: usize) -> Result<Vec<SearchResult>> {
        queries.chunks_exact(self.dim()).map(|q| self.search(q, k, n_probe)).collect()
    }

    /// Estimated score of one stored vector, summed directly from its
    /// decoded sub-centroids.
    pub fn naive_score(&self, q: &[f32], internal: usize) -> Result<f32> {
        let unit = normalized(q).ok_or_else(|| Error::arg("query has zero norm"))?;
        let m = self.codebook.m;
        for (l, ids) in self.partition.lists.iter().enumerate() {
            if let Some(p) = ids.iter().position(|&i| i as usize == internal) {
                let decoded = self.codebook.decode(&self.codes[l][p * m..(p + 1) * m]);
                return Ok(dot(&unit, self.partition.centroid(l)) + dot(&unit, &decoded));
            }
        }
        Err(Error::UnknownId(internal))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        let (d, l, m) = (self.dim(), self.partition.n_lists(), self.codebook.m);
        w.write_all(MAGIC).unwrap();
        w.write_u16::<LE>(VERSION).unwrap();
        w.write_u32::<LE>(d as u32).unwrap();
        w.write_u32::<LE>(l as u32).unwrap();
        w.write_u32::<LE>(m as u32).unwrap();
        w.write_u64::<LE>(self.codebook.trained_on as u64).unwrap();
        for v in self.partition.centroids().iter().chain(&self.codebook.centroids) {
            w.write_f32::<LE>(*v).unwrap();
        }
        w.write_u64::<LE>(self.len() as u64).unwrap();
        for (ids, codes) in self.partition.lists.iter().zip(&self.codes) {
            w.write_u32::<LE>(ids.len() as u32).unwrap();
            for id in ids {
                w.write_u32::<LE>(*id).unwrap();
            }
            w.write_all(codes).unwrap();
        }
        for id in &self.external_ids {
            w.write_u64::<LE>(*id).unwrap();
        }
        for v in &self.raw {
            w.write_f32::<LE>(*v).unwrap();
        }
        w
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        if read_bytes(&mut r, 4)? != MAGIC {
            return Err(Error::format("not an IVF-PQ index file (bad magic)"));
        }
        let version = r.read_u16::<LE>().map_err(truncated)?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported index version {version}")));
        }
        let d = r.read_u32::<LE>().map_err(truncated)? as usize;
        let l = r.read_u32::<LE>().map_err(truncated)? as usize;
        let m = r.read_u32::<LE>().map_err(truncated)? as usize;
        if d == 0 || l == 0 || m == 0 || !d.is_multiple_of(m) {
            return Err(Error::format("bad PQ header"));
        }
        let trained_on = r.read_u64::<LE>().map_err(truncated)? as usize;
        check_remaining(&r, ((l * d + m * PQ_KS * (d / m)) * 4) as u64)?;
        let centroids = read_f32s(&mut r, l * d)?;
        let cb = read_f32s(&mut r, m * PQ_KS * (d / m))?;
        let n = r.read_u64::<LE>().map_err(truncated)? as usize;
        let mut lists = Vec::with_capacity(l);
        let mut codes = Vec::with_capacity(l);
        let mut seen = vec![false; n.min(bytes.len())];
        for _ in 0..l {
            let len = r.read_u32::<LE>().map_err(truncated)? as usize;
            check_remaining(&r, (len * (4 + m)) as u64)?;
            let mut ids = Vec::with_capacity(len);
            for _ in 0..len {
                let id = r.read_u32::<LE>().map_err(truncated)?;
                match seen.get_mut(id as usize) {
                    Some(s) if !*s => *s = true,
                    _ => return Err(Error::format(format!("bad list id {id}"))),
                }
                ids.push(id);
            }
            lists.push(ids);
            codes.push(read_bytes(&mut r, len * m)?);
        }
        if seen.len() != n || seen.iter().any(|s| !s) {
            return Err(Error::format("list contents disagree with the vector count"));
        }
        check_remaining(&r, (n * (8 + 4 * d)) as u64)?;
        let mut external_ids = vec![0u64; n];
        r.read_u64_into::<LE>(&mut external_ids).map_err(truncated)?;
        let raw = read_f32s(&mut r, n * d)?;
        if r.position() as usize != bytes.len() {
            return Err(Error::format("trailing bytes after index data"));
        }
        Ok(IvfPqIndex {
            partition: CoarsePartition::from_raw_parts(centroids, d, lists),
            codebook: PqCodebook { m, dim: d, centroids: cb, trained_on },
            codes,
            raw,
            external_ids,
        })
    }
}

/// `x - c_assign(x)` for each unit row.
pub fn residuals_of(partition: &CoarsePartition, unit: &[f32]) -> Vec<f32> {
    let d = partition.dim();
    let mut out = Vec::with_capacity(unit.len());
    for row in unit.chunks_exact(d) {
        let (l, _) = partition.assign(row);
        out.extend(row.iter().zip(partition.centroid(l)).map(|(x, c)| x - c));
    }
    out
}
