//! Streaming ingestion: train on the first rows, add the rest in batches,
//! and re-measure recall against the cumulative database after each batch.

use std::time::Instant;

use ivftq::data::make_stream;
use ivftq::eval::{GroundTruth, IncrementalTruth, SeedStats};
use ivftq::{train_partition, IndexConfig, IvfPqIndex, IvfTqIndex, PqParams};
use serde::Serialize;

use crate::error::Result;
use crate::preset::ExperimentPreset;
use crate::recall_of;

/// One value per arm. `pq_retrain` is absent when the preset skips that arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Arms {
    pub ivf_tq: f64,
    pub pq_stale: f64,
    pub pq_retrain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchRow {
    pub cumulative_n: usize,
    pub recall: Arms,
    /// Add plus search wall-clock for this step.
    pub seconds: Arms,
    pub cumulative_retrain_secs: Arms,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub rows: Vec<BatchRow>,
    /// Final minus initial recall.
    pub delta: Arms,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamingSummary {
    pub delta_ivf_tq: SeedStats,
    pub delta_pq_stale: SeedStats,
    pub delta_pq_retrain: Option<SeedStats>,
    /// IVF-TQ minus stale PQ at the final state.
    pub final_gap: SeedStats,
    /// Retrain minus stale at each row, paired over seeds.
    pub retrain_minus_stale: Vec<SeedStats>,
    /// Largest `|retrain - stale|` over every seed and row.
    pub max_abs_retrain_minus_stale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamingReport {
    pub preset: String,
    pub dataset: String,
    pub order: String,
    pub n_lists: usize,
    pub n_probe: usize,
    pub k: usize,
    pub n_queries: usize,
    pub tq_bits_per_vec: u64,
    pub pq_bits_per_vec: u64,
    pub runs: Vec<SeedRun>,
    pub summary: StreamingSummary,
}

pub fn run_streaming(preset: &ExperimentPreset) -> Result<StreamingReport> {
    let spec = preset.require_stream()?;
    let pq_spec = preset.require_pq()?;
    let ds = preset.dataset.load()?;
    preset.check_dataset(&ds)?;
    let (d, k, n_probe, l) = (ds.dim, preset.k, preset.n_probe, preset.n_lists);

    let mut runs = Vec::with_capacity(preset.seeds.len());
    let mut bits = (0, 0);
    for &seed in &preset.seeds {
        let stream = make_stream(&ds.base, d, &spec.plan(seed))?;
        let queries = stream.transform_queries(&ds.queries)?;
        let mut truth = IncrementalTruth::new(&queries, d, k)?;
        truth.extend(&stream.train)?;

        // One partition, shared by every arm.
        let partition = train_partition(&stream.train, d, l, seed, ivftq::partition::DEFAULT_KMEANS_ITERS)?;
        let config = IndexConfig::new(d, preset.bits, l).with_sign_bit(preset.use_sign_bit).with_seeds(seed, seed);
        let mut tq = IvfTqIndex::with_partition(config, partition.clone())?;
        tq.add_batch(&stream.train, 0)?;
        let params = PqParams { max_train_points: pq_spec.max_train_points, ..PqParams::new(pq_spec.m, seed) };
        let mut stale = IvfPqIndex::build_on_partition(&stream.train, partition, params)?;
        let mut retrain = if pq_spec.retrain_arm { Some(stale.clone()) } else { None };
        bits = (tq.bit_accounting().bits_per_vec, stale.codebook().bits_per_vec());

        let mut retrain_secs = 0.0;
        let mut rows = Vec::with_capacity(spec.n_batches + 1);
        let mut next_id = (stream.train.len() / d) as u64;
        let mut step = |batch: Option<&[f32]>, gt: &GroundTruth, tq: &mut IvfTqIndex, stale: &mut IvfPqIndex, retrain: &mut Option<IvfPqIndex>| -> Result<BatchRow> {
            let t = Instant::now();
            if let Some(b) = batch {
                tq.add_batch(b, next_id)?;
            }
            let r_tq = recall_of(tq.search_batch(&queries, k, n_probe, 0)?, &gt.ids, k)?;
            let s_tq = t.elapsed().as_secs_f64();
            let t = Instant::now();
            if let Some(b) = batch {
                stale.add_batch(b, next_id)?;
            }
            let r_stale = recall_of(stale.search_batch(&queries, k, n_probe)?, &gt.ids, k)?;
            let s_stale = t.elapsed().as_secs_f64();
            let (mut r_re, mut s_re) = (None, None);
            if let Some(idx) = retrain.as_mut() {
                let t = Instant::now();
                if let Some(b) = batch {
                    idx.add_batch(b, next_id)?;
                    retrain_secs += idx.retrain(params)?.seconds;
                }
                r_re = Some(recall_of(idx.search_batch(&queries, k, n_probe)?, &gt.ids, k)?);
                s_re = Some(t.elapsed().as_secs_f64());
            }
            if let Some(b) = batch {
                next_id += (b.len() / d) as u64;
            }
            Ok(BatchRow {
                cumulative_n: tq.len(),
                recall: Arms { ivf_tq: r_tq, pq_stale: r_stale, pq_retrain: r_re },
                seconds: Arms { ivf_tq: s_tq, pq_stale: s_stale, pq_retrain: s_re },
                cumulative_retrain_secs: Arms { ivf_tq: 0.0, pq_stale: 0.0, pq_retrain: retrain.as_ref().map(|_| retrain_secs) },
            })
        };
        rows.push(step(None, &truth.snapshot(), &mut tq, &mut stale, &mut retrain)?);
        for batch in &stream.batches {
            // Ground truth moves first so every arm is scored against the
            // same cumulative database.
            truth.extend(batch)?;
            rows.push(step(Some(batch), &truth.snapshot(), &mut tq, &mut stale, &mut retrain)?);
            log::info!("seed {seed}: n={} recall {:?}", rows.last().unwrap().cumulative_n, rows.last().unwrap().recall);
        }
        let (first, last) = (&rows[0].recall, &rows[rows.len() - 1].recall);
        let delta = Arms {
            ivf_tq: last.ivf_tq - first.ivf_tq,
            pq_stale: last.pq_stale - first.pq_stale,
            pq_retrain: last.pq_retrain.zip(first.pq_retrain).map(|(a, b)| a - b),
        };
        runs.push(SeedRun { seed, rows, delta });
    }

    let summary = summarize(&runs)?;
    Ok(StreamingReport {
        preset: preset.name.clone(),
        dataset: ds.name.clone(),
        order: format!("{:?}", spec.order),
        n_lists: l,
        n_probe,
        k,
        n_queries: ds.n_queries(),
        tq_bits_per_vec: bits.0,
        pq_bits_per_vec: bits.1,
        runs,
        summary,
    })
}

fn summarize(runs: &[SeedRun]) -> Result<StreamingSummary> {
    let col = |f: &dyn Fn(&SeedRun) -> f64| runs.iter().map(f).collect::<Vec<f64>>();
    let delta_ivf_tq = SeedStats::from_values(&col(&|r| r.delta.ivf_tq));
    let delta_pq_stale = SeedStats::from_values(&col(&|r| r.delta.pq_stale));
    let delta_pq_retrain = runs
        .iter()
        .map(|r| r.delta.pq_retrain)
        .collect::<Option<Vec<f64>>>()
        .map(|v| SeedStats::from_values(&v));
    let final_tq = col(&|r| r.rows.last().unwrap().recall.ivf_tq);
    let final_stale = col(&|r| r.rows.last().unwrap().recall.pq_stale);
    let final_gap = SeedStats::paired(&final_tq, &final_stale)?;

    let n_rows = runs.iter().map(|r| r.rows.len()).min().unwrap_or(0);
    let mut retrain_minus_stale = Vec::new();
    let mut max_abs: Option<f64> = None;
    for i in 0..n_rows {
        let diffs: Option<Vec<f64>> = runs.iter().map(|r| r.rows[i].recall.pq_retrain.map(|v| v - r.rows[i].recall.pq_stale)).collect();
        if let Some(diffs) = diffs {
            for &x in &diffs {
                max_abs = Some(max_abs.map_or(x.abs(), |m: f64| m.max(x.abs())));
            }
            retrain_minus_stale.push(SeedStats::from_values(&diffs));
        }
    }
    Ok(StreamingSummary {
        delta_ivf_tq,
        delta_pq_stale,
        delta_pq_retrain,
        final_gap,
        retrain_minus_stale,
        max_abs_retrain_minus_stale: max_abs,
    })
}
