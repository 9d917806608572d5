//! Recovery from a rotation shift: the stream after the training prefix is
//! rotated, queries come from the rotated space, and a frozen IVF-TQ index is
//! compared with one whose partition is refreshed on a schedule.

use std::time::Instant;

use ivftq::data::make_stream;
use ivftq::eval::exact_topk;
use ivftq::partition::DEFAULT_KMEANS_ITERS;
use ivftq::{refresh, train_partition, IndexConfig, IvfPqIndex, IvfTqIndex, PqParams, RefreshPolicy, RefreshReport};
use serde::Serialize;

use crate::error::{BenchError, Result};
use crate::preset::ExperimentPreset;
use crate::recall_of;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryArm {
    pub arm: String,
    pub recall_no_rerank: f64,
    /// `None` where the arm keeps no raw vectors.
    pub recall_rerank: Option<f64>,
    pub refresh_calls: usize,
    /// Cumulative refresh or codebook retrain wall-clock.
    pub maintenance_secs: f64,
    /// Codebook retrain seconds only; zero for both IVF-TQ arms.
    pub retrain_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoverySeed {
    pub seed: u64,
    pub arms: Vec<RecoveryArm>,
    pub refreshes: Vec<RefreshReport>,
    /// Quantizer and rotation digest before and after every refresh.
    pub compression_digest_before: String,
    pub compression_digest_after: String,
}

impl RecoverySeed {
    pub fn arm(&self, name: &str) -> Option<&RecoveryArm> {
        self.arms.iter().find(|a| a.arm == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub preset: String,
    pub dataset: String,
    pub n_lists: usize,
    pub n_probe: usize,
    pub rerank_depth: usize,
    pub n_queries: usize,
    pub seeds: Vec<RecoverySeed>,
}

pub const FROZEN: &str = "ivf-tq-frozen";
pub const ADAPTIVE: &str = "ivf-tq-adaptive";
pub const PQ_STALE: &str = "ivf-pq-stale";
pub const PQ_RETRAIN: &str = "ivf-pq-retrain";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn run_recovery(preset: &ExperimentPreset) -> Result<RecoveryReport> {
    let spec = preset.require_stream()?;
    let pq_spec = preset.require_pq()?;
    let rspec = preset.refresh.as_ref().ok_or_else(|| BenchError::preset(format!("preset {:?} has no refresh section", preset.name)))?;
    if preset.rerank_depth == 0 {
        return Err(BenchError::preset("the recovery protocol reports a rerank column; set rerank_depth"));
    }
    let ds = preset.dataset.load()?;
    preset.check_dataset(&ds)?;
    let (d, k, n_probe, l, rr) = (ds.dim, preset.k, preset.n_probe, preset.n_lists, preset.rerank_depth);

    let mut seeds = Vec::new();
    for &seed in &preset.seeds {
        let stream = make_stream(&ds.base, d, &spec.plan(seed))?;
        let queries = stream.transform_queries(&ds.queries)?;
        let policy = RefreshPolicy {
            trigger_every_n: rspec.trigger_every_n,
            sample_size: rspec.sample_size,
            use_raw_if_available: rspec.use_raw,
            seed,
            kmeans_iters: DEFAULT_KMEANS_ITERS,
        };
        policy.validate(l)?;

        let partition = train_partition(&stream.train, d, l, seed, DEFAULT_KMEANS_ITERS)?;
        let config = IndexConfig::new(d, preset.bits, l).with_sign_bit(preset.use_sign_bit).with_raw(true).with_seeds(seed, seed);
        let mut frozen = IvfTqIndex::with_partition(config, partition.clone())?;
        frozen.add_batch(&stream.train, 0)?;
        let mut adaptive = frozen.clone();
        let digest_before = adaptive.compression_digest();
        let params = PqParams { max_train_points: pq_spec.max_train_points, ..PqParams::new(pq_spec.m, seed) };
        let mut stale = IvfPqIndex::build_on_partition(&stream.train, partition, params)?;
        let mut retrain = if pq_spec.retrain_arm { Some(stale.clone()) } else { None };

        let mut refreshes = Vec::new();
        let (mut refresh_secs, mut retrain_secs) = (0.0, 0.0);
        let mut since = 0usize;
        let mut next_id = (stream.train.len() / d) as u64;
        let mut full = stream.train.clone();
        for batch in &stream.batches {
            frozen.add_batch(batch, next_id)?;
            adaptive.add_batch(batch, next_id)?;
            stale.add_batch(batch, next_id)?;
            if let Some(idx) = retrain.as_mut() {
                idx.add_batch(batch, next_id)?;
            }
            next_id += (batch.len() / d) as u64;
            full.extend_from_slice(batch);
            since += batch.len() / d;
            if policy.due(since) {
                let t = Instant::now();
                let report = refresh(&mut adaptive, &policy)?;
                refresh_secs += t.elapsed().as_secs_f64();
                refreshes.push(report);
                if let Some(idx) = retrain.as_mut() {
                    retrain_secs += idx.retrain_with_partition(seed, params)?.seconds;
                }
                since = 0;
            }
        }
        let truth = exact_topk(&full, &queries, d, k)?;
        let tq_arm = |name: &str, idx: &IvfTqIndex, calls: usize, secs: f64| -> Result<RecoveryArm> {
            Ok(RecoveryArm {
                arm: name.into(),
                recall_no_rerank: recall_of(idx.search_batch(&queries, k, n_probe, 0)?, &truth.ids, k)?,
                recall_rerank: Some(recall_of(idx.search_batch(&queries, k, n_probe, rr)?, &truth.ids, k)?),
                refresh_calls: calls,
                maintenance_secs: secs,
                retrain_secs: 0.0,
            })
        };
        let pq_arm = |name: &str, idx: &IvfPqIndex, secs: f64| -> Result<RecoveryArm> {
            Ok(RecoveryArm {
                arm: name.into(),
                recall_no_rerank: recall_of(idx.search_batch(&queries, k, n_probe)?, &truth.ids, k)?,
                recall_rerank: None,
                refresh_calls: 0,
                maintenance_secs: secs,
                retrain_secs: secs,
            })
        };
        let mut arms = vec![
            tq_arm(FROZEN, &frozen, 0, 0.0)?,
            tq_arm(ADAPTIVE, &adaptive, refreshes.len(), refresh_secs)?,
            pq_arm(PQ_STALE, &stale, 0.0)?,
        ];
        if let Some(idx) = &retrain {
            arms.push(pq_arm(PQ_RETRAIN, idx, retrain_secs)?);
        }
        seeds.push(RecoverySeed {
            seed,
            arms,
            refreshes,
            compression_digest_before: hex(&digest_before),
            compression_digest_after: hex(&adaptive.compression_digest()),
        });
    }
    Ok(RecoveryReport {
        preset: preset.name.clone(),
        dataset: ds.name.clone(),
        n_lists: l,
        n_probe,
        rerank_depth: rr,
        n_queries: ds.n_queries(),
        seeds,
    })
}
