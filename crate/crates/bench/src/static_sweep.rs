//! Static recall sweep: build each variant once, sweep `n_probe`.

use std::time::Instant;

use ivftq::eval::exact_topk;
use ivftq::{IndexConfig, IvfTqIndex};
use serde::Serialize;

use crate::error::{BenchError, Result};
use crate::preset::{ExperimentPreset, VariantSpec};
use crate::recall_of;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaticRow {
    pub variant: String,
    pub flat: bool,
    pub bits: u32,
    pub use_sign_bit: bool,
    pub n_probe: usize,
    pub rerank_depth: usize,
    pub recall: f64,
    /// Single-thread, after one warm-up pass. Never compared across runs.
    pub qps: f64,
    pub bits_per_vec: u64,
    pub bits_per_vec_rounded: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: String,
    pub build_secs: f64,
    pub mean_assigned_ip: f64,
    pub best_recall: f64,
    pub best_n_probe: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaticReport {
    pub preset: String,
    pub dataset: String,
    pub seed: u64,
    pub n_base: usize,
    pub n_queries: usize,
    pub k: usize,
    pub rows: Vec<StaticRow>,
    pub variants: Vec<VariantSummary>,
}

impl StaticReport {
    pub fn rows_for(&self, variant: &str) -> impl Iterator<Item = &StaticRow> {
        let v = variant.to_string();
        self.rows.iter().filter(move |r| r.variant == v)
    }

    pub fn summary(&self, variant: &str) -> Option<&VariantSummary> {
        self.variants.iter().find(|s| s.variant == variant)
    }

    /// Recall of `variant` at `n_probe`.
    pub fn recall(&self, variant: &str, n_probe: usize) -> Option<f64> {
        self.rows_for(variant).find(|r| r.n_probe == n_probe).map(|r| r.recall)
    }
}

fn default_variant(p: &ExperimentPreset) -> VariantSpec {
    VariantSpec {
        label: format!("ivf-b{}{}", p.bits, if p.use_sign_bit { "-sign" } else { "" }),
        bits: p.bits,
        use_sign_bit: p.use_sign_bit,
        flat: false,
        rerank_depth: p.rerank_depth,
    }
}

/// Builds every variant on the full base set with the first preset seed
/// and sweeps `n_probe`. Flat variants are searched once.
pub fn run_static(preset: &ExperimentPreset) -> Result<StaticReport> {
    let ds = preset.dataset.load()?;
    preset.check_dataset(&ds)?;
    let seed = preset.seeds[0];
    let (d, k) = (ds.dim, preset.k);
    let truth = exact_topk(&ds.base, &ds.queries, d, k)?;
    let variants = if preset.variants.is_empty() { vec![default_variant(preset)] } else { preset.variants.clone() };
    let sweep = if preset.n_probe_sweep.is_empty() { vec![preset.n_probe] } else { preset.n_probe_sweep.clone() };
    if ds.n_base() < preset.n_lists {
        return Err(BenchError::preset(format!("{} lists need at least that many base vectors", preset.n_lists)));
    }

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for v in &variants {
        let config = if v.flat { IndexConfig::flat(d, v.bits) } else { IndexConfig::new(d, v.bits, preset.n_lists) }
            .with_sign_bit(v.use_sign_bit)
            .with_raw(v.rerank_depth > 0)
            .with_seeds(seed, seed);
        let t = Instant::now();
        let index = IvfTqIndex::build(config, &ds.base)?;
        let build_secs = t.elapsed().as_secs_f64();
        let acct = index.bit_accounting();
        let probes: Vec<usize> = if v.flat { vec![1] } else { sweep.iter().map(|&p| p.min(preset.n_lists)).collect() };
        let mut best = (f64::NEG_INFINITY, 0);
        for n_probe in probes {
            // Warm-up pass, then the timed pass whose results are scored.
            index.search_batch(&ds.queries, k, n_probe, v.rerank_depth)?;
            let t = Instant::now();
            let results = index.search_batch(&ds.queries, k, n_probe, v.rerank_depth)?;
            let secs = t.elapsed().as_secs_f64();
            let recall = recall_of(results, &truth.ids, k)?;
            if recall > best.0 {
                best = (recall, n_probe);
            }
            rows.push(StaticRow {
                variant: v.label.clone(),
                flat: v.flat,
                bits: v.bits,
                use_sign_bit: v.use_sign_bit,
                n_probe,
                rerank_depth: v.rerank_depth,
                recall,
                qps: ds.n_queries() as f64 / secs.max(1e-9),
                bits_per_vec: acct.bits_per_vec,
                bits_per_vec_rounded: acct.bits_per_vec_rounded,
            });
        }
        summaries.push(VariantSummary {
            variant: v.label.clone(),
            build_secs,
            mean_assigned_ip: index.mean_assigned_ip(),
            best_recall: best.0,
            best_n_probe: best.1,
        });
    }
    Ok(StaticReport {
        preset: preset.name.clone(),
        dataset: ds.name.clone(),
        seed,
        n_base: ds.n_base(),
        n_queries: ds.n_queries(),
        k,
        rows,
        variants: summaries,
    })
}
