//! The IVF-TQ index: a spherical k-means coarse partition over normalized
//! vectors, with every residual rotated, renormalized and scalar-quantized by
//! a fixed Lloyd–Max codebook.

mod ablation;
pub(crate) mod persist;

pub use ablation::{AblationReport, BitPosition};

use half::f16;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::codes;
use crate::error::{Error, Result};
use crate::linalg::{check_dim, dot, normalize_rows, normalized};
use crate::lloydmax::{design, ScalarQuantizer};
use crate::partition::{train_partition, CoarsePartition, DEFAULT_KMEANS_ITERS};
use crate::rotation::{generate_rotation, RotationMatrix};
use crate::topk::TopK;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IndexConfig {
    pub dim: usize,
    pub bits: u32,
    /// Ignored in flat mode.
    pub n_lists: usize,
    pub use_sign_bit: bool,
    /// Keep the normalized input vectors for re-ranking and audits.
    pub keep_raw: bool,
    /// Quantize whole normalized vectors with no coarse partition.
    pub flat: bool,
    pub rotation_seed: u64,
    pub kmeans_seed: u64,
    pub kmeans_iters: usize,
}

impl IndexConfig {
    pub fn new(dim: usize, bits: u32, n_lists: usize) -> Self {
        IndexConfig {
            dim,
            bits,
            n_lists,
            use_sign_bit: true,
            keep_raw: false,
            flat: false,
            rotation_seed: 0,
            kmeans_seed: 0,
            kmeans_iters: DEFAULT_KMEANS_ITERS,
        }
    }

    pub fn flat(dim: usize, bits: u32) -> Self {
        IndexConfig { flat: true, n_lists: 1, ..IndexConfig::new(dim, bits, 1) }
    }

    pub fn with_sign_bit(mut self, on: bool) -> Self {
        self.use_sign_bit = on;
        self
    }

    pub fn with_raw(mut self, on: bool) -> Self {
        self.keep_raw = on;
        self
    }

    pub fn with_seeds(mut self, rotation_seed: u64, kmeans_seed: u64) -> Self {
        self.rotation_seed = rotation_seed;
        self.kmeans_seed = kmeans_seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.bits) {
            return Err(Error::Config(format!("bits must be in 1..=8, got {}", self.bits)));
        }
        if self.dim < 2 {
            return Err(Error::Config(format!("dim must be at least 2, got {}", self.dim)));
        }
        if self.n_lists == 0 {
            return Err(Error::Config("n_lists must be at least 1".into()));
        }
        if self.flat && self.n_lists != 1 {
            return Err(Error::Config("flat mode has no coarse lists; set n_lists to 1".into()));
        }
        Ok(())
    }

    pub(crate) fn code_bytes(&self) -> usize {
        codes::packed_len(self.bits as u8, self.dim)
    }

    pub(crate) fn sign_bytes(&self) -> usize {
        if self.use_sign_bit {
            codes::packed_len(1, self.dim)
        } else {
            0
        }
    }
}

/// One encoded vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorCode {
    /// `bits * dim` bits of bin indices.
    pub codes: Vec<u8>,
    /// `dim` half-bin bits; empty when the sign bit is off.
    pub signs: Vec<u8>,
    pub list_id: u32,
    pub residual_norm: f16,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResult {
    pub ids: Vec<u64>,
    pub scores: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct ListCodes {
    pub(crate) codes: Vec<u8>,
    pub(crate) signs: Vec<u8>,
    pub(crate) norms: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BitBreakdown {
    pub codes: u64,
    pub signs: u64,
    pub list_id: u64,
    pub norm: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FixedCosts {
    pub centroid_bits: u64,
    pub rotation_bits: u64,
    pub quantizer_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BitAccounting {
    /// `b*d + d + ceil(log2 L) + 16` (terms dropped when not stored).
    pub bits_per_vec: u64,
    /// Same with the id and norm overhead rounded to 32 bits.
    pub bits_per_vec_rounded: u64,
    pub breakdown: BitBreakdown,
    pub fixed: FixedCosts,
    pub n_vectors: u64,
    pub total_logical_bytes: u64,
}

#[derive(Debug, Clone)]
pub struct IvfTqIndex {
    pub(crate) config: IndexConfig,
    pub(crate) quantizer: ScalarQuantizer,
    pub(crate) rotation: RotationMatrix,
    pub(crate) partition: CoarsePartition,
    pub(crate) store: Vec<ListCodes>,
    /// (list, position) per internal id.
    pub(crate) locs: Vec<(u32, u32)>,
    pub(crate) external_ids: Vec<u64>,
    /// Normalized inputs, internal id order.
    pub(crate) raw: Option<Vec<f32>>,
    pub(crate) lut: Vec<f32>,
    /// Vectors added since the partition was last trained or refreshed.
    pub(crate) added_since_refresh: u64,
}

pub fn ceil_log2(n: usize) -> u64 {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as u64
    }
}

impl IvfTqIndex {
    /// Normalizes `training`, trains the partition, and adds every row with
    /// external ids `0..n`.
    pub fn build(config: IndexConfig, training: &[f32]) -> Result<Self> {
        config.validate()?;
        if !training.len().is_multiple_of(config.dim) {
            return Err(Error::arg("training data is not a whole number of rows"));
        }
        let n = training.len() / config.dim;
        if !config.flat && n < config.n_lists {
            return Err(Error::arg(format!("need at least n_lists={} training vectors, got {n}", config.n_lists)));
        }
        let unit = normalize_rows(training, config.dim)?;
        let mut partition = if config.flat {
            CoarsePartition::flat(config.dim)
        } else {
            train_partition(&unit, config.dim, config.n_lists, config.kmeans_seed, config.kmeans_iters)?
        };
        partition.clear_lists();
        let mut index = Self::with_partition(config, partition)?;
        index.add_normalized_batch(&unit, 0)?;
        Ok(index)
    }

    /// Empty index over a given partition. The partition's lists are
    /// discarded.
    pub fn with_partition(config: IndexConfig, mut partition: CoarsePartition) -> Result<Self> {
        config.validate()?;
        check_dim(config.dim, partition.dim())?;
        if !config.flat && partition.n_lists() != config.n_lists {
            return Err(Error::Config(format!(
                "partition has {} lists but config asks for {}",
                partition.n_lists(),
                config.n_lists
            )));
        }
        partition.clear_lists();
        let quantizer = design(config.bits, config.dim)?;
        let rotation = generate_rotation(config.dim, config.rotation_seed)?;
        Ok(Self::from_components(config, quantizer, rotation, partition))
    }

    pub(crate) fn from_components(
        config: IndexConfig,
        quantizer: ScalarQuantizer,
        rotation: RotationMatrix,
        partition: CoarsePartition,
    ) -> Self {
        let lut = quantizer.reconstruction_table(config.use_sign_bit);
        let store = vec![ListCodes::default(); partition.n_lists()];
        let raw = config.keep_raw.then(Vec::new);
        IvfTqIndex {
            config,
            quantizer,
            rotation,
            partition,
            store,
            locs: Vec::new(),
            external_ids: Vec::new(),
            raw,
            lut,
            added_since_refresh: 0,
        }
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn quantizer(&self) -> &ScalarQuantizer {
        &self.quantizer
    }

    pub fn rotation(&self) -> &RotationMatrix {
        &self.rotation
    }

    pub fn partition(&self) -> &CoarsePartition {
        &self.partition
    }

    pub fn len(&self) -> usize {
        self.locs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locs.is_empty()
    }

    pub fn n_lists(&self) -> usize {
        self.partition.n_lists()
    }

    pub fn external_id(&self, internal: usize) -> Option<u64> {
        self.external_ids.get(internal).copied()
    }

    pub fn has_raw(&self) -> bool {
        self.raw.is_some()
    }

    /// Stored normalized input for an internal id, when kept.
    pub fn raw_vector(&self, internal: usize) -> Option<&[f32]> {
        let d = self.config.dim;
        self.raw.as_ref().and_then(|r| r.get(internal * d..(internal + 1) * d))
    }

    /// SHA-256 over the serialized quantizer and rotation. Unchanged by any
    /// add or refresh.
    pub fn compression_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.quantizer.to_bytes());
        h.update(self.rotation.to_bytes());
        h.finalize().into()
    }

    pub fn encode(&self, x: &[f32]) -> Result<VectorCode> {
        check_dim(self.config.dim, x.len())?;
        let unit = normalized(x).ok_or_else(|| Error::arg("cannot encode a zero vector"))?;
        Ok(self.encode_unit(&unit))
    }

    pub(crate) fn encode_unit(&self, unit: &[f32]) -> VectorCode {
        let (l, _) = self.partition.assign(unit);
        self.encode_in_list(unit, l)
    }

    pub(crate) fn encode_in_list(&self, unit: &[f32], l: usize) -> VectorCode {
        let d = self.config.dim;
        let bits = self.config.bits as u8;
        let c = self.partition.centroid(l);
        let r: Vec<f64> = unit.iter().zip(c).map(|(&x, &c)| x as f64 - c as f64).collect();
        let r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut bins = vec![0u8; d];
        let mut signs = vec![0u8; d];
        if r_norm > 0.0 {
            let pr = self.rotation.rotate_f64(&r).expect("dimension checked");
            let pn = pr.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (j, &t) in pr.iter().enumerate() {
                let (bin, sign) = self.quantizer.quantize_coord(t / pn);
                bins[j] = bin as u8;
                signs[j] = sign as u8;
            }
        }
        VectorCode {
            codes: codes::pack_to_vec(&bins, bits),
            signs: if self.config.use_sign_bit { codes::pack_to_vec(&signs, 1) } else { Vec::new() },
            list_id: l as u32,
            residual_norm: f16::from_f64(r_norm),
        }
    }

    pub fn add(&mut self, x: &[f32], external_id: u64) -> Result<usize> {
        check_dim(self.config.dim, x.len())?;
        let unit = normalized(x).ok_or_else(|| Error::arg("cannot add a zero vector"))?;
        let code = self.encode_unit(&unit);
        self.added_since_refresh += 1;
        Ok(self.push_code(code, external_id, &unit))
    }

    /// Adds rows with consecutive external ids starting at `first_id`.
    /// Rejects the whole batch if any row has zero norm.
    pub fn add_batch(&mut self, data: &[f32], first_id: u64) -> Result<std::ops::Range<usize>> {
        if !data.len().is_multiple_of(self.config.dim) {
            return Err(Error::arg("batch is not a whole number of rows"));
        }
        let unit = normalize_rows(data, self.config.dim)?;
        let added = self.add_normalized_batch(&unit, first_id)?;
        self.added_since_refresh += added.len() as u64;
        Ok(added)
    }

    /// Vectors added since build or the last refresh; compare with
    /// [`crate::RefreshPolicy::due`].
    pub fn added_since_refresh(&self) -> usize {
        self.added_since_refresh as usize
    }

    fn add_normalized_batch(&mut self, unit: &[f32], first_id: u64) -> Result<std::ops::Range<usize>> {
        let start = self.len();
        for (i, row) in unit.chunks_exact(self.config.dim).enumerate() {
            let code = self.encode_unit(row);
            self.push_code(code, first_id + i as u64, row);
        }
        Ok(start..self.len())
    }

    pub(crate) fn push_code(&mut self, code: VectorCode, external_id: u64, unit: &[f32]) -> usize {
        let id = self.locs.len();
        let l = code.list_id as usize;
        let pos = self.partition.lists[l].len();
        self.partition.lists[l].push(id as u32);
        let slot = &mut self.store[l];
        slot.codes.extend_from_slice(&code.codes);
        slot.signs.extend_from_slice(&code.signs);
        slot.norms.push(code.residual_norm.to_bits());
        self.locs.push((l as u32, pos as u32));
        self.external_ids.push(external_id);
        if let Some(raw) = self.raw.as_mut() {
            raw.extend_from_slice(unit);
        }
        id
    }

    /// Stored code of an internal id.
    pub fn code(&self, internal: usize) -> Result<VectorCode> {
        let &(l, pos) = self.locs.get(internal).ok_or(Error::UnknownId(internal))?;
        let (cb, sb) = (self.config.code_bytes(), self.config.sign_bytes());
        let s = &self.store[l as usize];
        let p = pos as usize;
        Ok(VectorCode {
            codes: s.codes[p * cb..(p + 1) * cb].to_vec(),
            signs: s.signs[p * sb..(p + 1) * sb].to_vec(),
            list_id: l,
            residual_norm: f16::from_bits(s.norms[p]),
        })
    }

    /// Rotated-domain reconstruction of the unit residual direction.
    fn residual_direction(&self, code: &VectorCode) -> Vec<f64> {
        let bits = self.config.bits as u8;
        (0..self.config.dim)
            .map(|j| {
                let bin = codes::get(&code.codes, bits, j) as usize;
                let sign = self.config.use_sign_bit && codes::get(&code.signs, 1, j) == 1;
                self.quantizer.value(bin, sign, self.config.use_sign_bit)
            })
            .collect()
    }

    /// `c + ||r|| * P^T rho_hat`, not renormalized.
    pub fn reconstruct_vector(&self, internal: usize) -> Result<Vec<f32>> {
        let code = self.code(internal)?;
        Ok(self.reconstruct_code(&code))
    }

    pub fn reconstruct_code(&self, code: &VectorCode) -> Vec<f32> {
        let c = self.partition.centroid(code.list_id as usize);
        let norm = code.residual_norm.to_f64();
        if norm == 0.0 {
            return c.to_vec();
        }
        let back = self.rotation.rotate_inverse_f64(&self.residual_direction(code)).expect("dimension checked");
        c.iter().zip(&back).map(|(&c, &v)| (c as f64 + norm * v) as f32).collect()
    }

    /// Per-query table: entry `j * stride + ((bin << 1) | sign)` holds
    /// `(P q)_j` times that reconstruction value.
    fn query_table(&self, rq: &[f32]) -> Vec<f32> {
        let stride = self.lut.len();
        let mut table = vec![0.0f32; rq.len() * stride];
        for (j, &qj) in rq.iter().enumerate() {
            for (t, &v) in table[j * stride..(j + 1) * stride].iter_mut().zip(&self.lut) {
                *t = qj * v;
            }
        }
        table
    }

    #[inline]
    fn residual_score(&self, table: &[f32], codes: &[u8], signs: &[u8]) -> f32 {
        let d = self.config.dim;
        let bits = self.config.bits as usize;
        let stride = self.lut.len();
        let mut acc = [0.0f32; 4];
        if self.config.use_sign_bit {
            for j in 0..d {
                let pos = j * bits;
                let mut wide = codes[pos / 8] as u16;
                if pos % 8 + bits > 8 {
                    wide |= (codes[pos / 8 + 1] as u16) << 8;
                }
                let bin = ((wide >> (pos % 8)) & ((1u16 << bits) - 1)) as usize;
                let sign = ((signs[j / 8] >> (j % 8)) & 1) as usize;
                acc[j & 3] += table[j * stride + ((bin << 1) | sign)];
            }
        } else {
            for j in 0..d {
                let pos = j * bits;
                let mut wide = codes[pos / 8] as u16;
                if pos % 8 + bits > 8 {
                    wide |= (codes[pos / 8 + 1] as u16) << 8;
                }
                let bin = ((wide >> (pos % 8)) & ((1u16 << bits) - 1)) as usize;
                acc[j & 3] += table[j * stride + (bin << 1)];
            }
        }
        (acc[0] + acc[1]) + (acc[2] + acc[3])
    }

    fn prepare_query(&self, q: &[f32]) -> Result<(Vec<f32>, Vec<f32>)> {
        check_dim(self.config.dim, q.len())?;
        let unit = normalized(q).ok_or_else(|| Error::arg("query has zero norm"))?;
        let mut rq = vec![0.0f32; self.config.dim];
        self.rotation.rotate_into(&unit, &mut rq);
        Ok((unit, rq))
    }

    fn clamp_probe(&self, n_probe: usize) -> Result<usize> {
        if n_probe == 0 {
            return Err(Error::arg("n_probe must be at least 1"));
        }
        let l = self.n_lists();
        if n_probe > l {
            log::warn!("n_probe {n_probe} exceeds the {l} lists; clamping");
        }
        Ok(n_probe.min(l))
    }

    /// Internal ids scanned for a query at `n_probe`.
    pub fn candidates(&self, q: &[f32], n_probe: usize) -> Result<Vec<u32>> {
        let n_probe = self.clamp_probe(n_probe)?;
        let (unit, _) = self.prepare_query(q)?;
        let mut out = Vec::new();
        for (l, _) in self.partition.probe(&unit, n_probe) {
            out.extend_from_slice(&self.partition.lists[l]);
        }
        Ok(out)
    }

    /// Estimated inner-product scores for every stored vector in the probed
    /// lists, pushed into `top`.
    fn scan(&self, unit: &[f32], rq: &[f32], n_probe: usize, top: &mut TopK) {
        let table = self.query_table(rq);
        let (cb, sb) = (self.config.code_bytes(), self.config.sign_bytes());
        for (l, coarse) in self.partition.probe(unit, n_probe) {
            let s = &self.store[l];
            for (p, &id) in self.partition.lists[l].iter().enumerate() {
                let norm = f16::from_bits(s.norms[p]).to_f32();
                let resid = if norm == 0.0 {
                    0.0
                } else {
                    self.residual_score(&table, &s.codes[p * cb..(p + 1) * cb], &s.signs[p * sb..p * sb + sb])
                };
                top.push(coarse + norm * resid, id);
            }
        }
    }

    /// Estimated score of every stored vector, internal id order.
    pub fn estimate_all(&self, q: &[f32]) -> Result<Vec<f32>> {
        let (unit, rq) = self.prepare_query(q)?;
        let table = self.query_table(&rq);
        let (cb, sb) = (self.config.code_bytes(), self.config.sign_bytes());
        let mut out = vec![0.0f32; self.len()];
        for (l, ids) in self.partition.lists.iter().enumerate() {
            let coarse = dot(&unit, self.partition.centroid(l));
            let s = &self.store[l];
            for (p, &id) in ids.iter().enumerate() {
                let norm = f16::from_bits(s.norms[p]).to_f32();
                let resid = if norm == 0.0 {
                    0.0
                } else {
                    self.residual_score(&table, &s.codes[p * cb..(p + 1) * cb], &s.signs[p * sb..p * sb + sb])
                };
                out[id as usize] = coarse + norm * resid;
            }
        }
        Ok(out)
    }

    /// Top-`k` by estimated inner product over the `n_probe` best lists.
    /// With `rerank_depth > 0` the best `max(rerank_depth, k)` estimates are
    /// re-scored exactly against the stored vectors.
    pub fn search(&self, q: &[f32], k: usize, n_probe: usize, rerank_depth: usize) -> Result<SearchResult> {
        if k == 0 {
            return Err(Error::arg("k must be at least 1"));
        }
        if rerank_depth > 0 && self.raw.is_none() {
            return Err(Error::Config("re-ranking needs an index built with keep_raw".into()));
        }
        let n_probe = self.clamp_probe(n_probe)?;
        let (unit, rq) = self.prepare_query(q)?;
        let depth = if rerank_depth > 0 { rerank_depth.max(k) } else { k };
        let mut top = TopK::new(depth);
        self.scan(&unit, &rq, n_probe, &mut top);
        let hits = top.into_sorted();
        let hits = if rerank_depth > 0 {
            let raw = self.raw.as_ref().expect("checked above");
            let d = self.config.dim;
            let mut exact = TopK::new(k);
            for (id, _) in hits {
                let i = id as usize;
                exact.push(dot(&unit, &raw[i * d..(i + 1) * d]), id);
            }
            exact.into_sorted()
        } else {
            hits
        };
        Ok(self.to_result(hits))
    }

    /// Exhaustive scan of a flat-mode index.
    pub fn search_flat(&self, q: &[f32], k: usize) -> Result<SearchResult> {
        if !self.config.flat {
            return Err(Error::Config("search_flat needs an index built in flat mode".into()));
        }
        self.search(q, k, 1, 0)
    }

    pub fn search_batch(&self, queries: &[f32], k: usize, n_probe: usize, rerank_depth: usize) -> Result<Vec<SearchResult>> {
        if !queries.len().is_multiple_of(self.config.dim) {
            return Err(Error::DimensionMismatch { expected: self.config.dim, got: queries.len() % self.config.dim });
        }
        queries.chunks_exact(self.config.dim).map(|q| self.search(q, k, n_probe, rerank_depth)).collect()
    }

    fn to_result(&self, hits: Vec<(u32, f32)>) -> SearchResult {
        let ids = hits.iter().map(|&(id, _)| self.external_ids[id as usize]).collect();
        let scores = hits.iter().map(|&(_, s)| s).collect();
        SearchResult { ids, scores }
    }

    pub fn bit_accounting(&self) -> BitAccounting {
        let c = &self.config;
        let d = c.dim as u64;
        let codes = c.bits as u64 * d;
        let signs = if c.use_sign_bit { d } else { 0 };
        let (list_id, norm, rounded_overhead) = if c.flat { (0, 0, 0) } else { (ceil_log2(self.n_lists()), 16, 32) };
        let bits_per_vec = codes + signs + list_id + norm;
        let fixed = FixedCosts {
            centroid_bits: if c.flat { 0 } else { self.n_lists() as u64 * d * 32 },
            rotation_bits: d * d * 64,
            quantizer_bits: self.quantizer.to_bytes().len() as u64 * 8,
        };
        let n = self.len() as u64;
        let fixed_total = fixed.centroid_bits + fixed.rotation_bits + fixed.quantizer_bits;
        BitAccounting {
            bits_per_vec,
            bits_per_vec_rounded: codes + signs + rounded_overhead,
            breakdown: BitBreakdown { codes, signs, list_id, norm },
            fixed,
            n_vectors: n,
            total_logical_bytes: (n * bits_per_vec + fixed_total).div_ceil(8),
        }
    }

    /// Mean inner product between each stored vector's centroid and the
    /// stored vector, recovered from residual norms via
    /// `||r||^2 = 2 - 2 <x, c>`.
    pub fn mean_assigned_ip(&self) -> f64 {
        if self.is_empty() || self.config.flat {
            return 0.0;
        }
        let mut acc = 0.0;
        for s in &self.store {
            for &n in &s.norms {
                let r = f16::from_bits(n).to_f64();
                acc += 1.0 - 0.5 * r * r;
            }
        }
        acc / self.len() as f64
    }

    /// Replaces the partition and re-encodes every vector from `sources`
    /// (unit rows, internal id order). Quantizer and rotation are untouched.
    pub(crate) fn reencode(&mut self, mut partition: CoarsePartition, sources: &[f32]) {
        let d = self.config.dim;
        partition.clear_lists();
        let mut fresh = Self::from_components(self.config.clone(), self.quantizer.clone(), self.rotation.clone(), partition);
        // Ids keep their order, so the raw store carries over unchanged.
        fresh.raw = None;
        for (i, row) in sources.chunks_exact(d).enumerate() {
            let code = fresh.encode_unit(row);
            fresh.push_code(code, self.external_ids[i], row);
        }
        fresh.raw = self.raw.take();
        *self = fresh;
    }
}
