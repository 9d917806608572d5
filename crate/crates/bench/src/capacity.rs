//! Capacity-vs-bias control: three IVF-PQ indexes fitted on the stream
//! prefix, on a random sample of the same size, and on everything, all
//! scored against the full database.

use std::time::Instant;

use ivftq::data::make_stream;
use ivftq::eval::exact_topk;
use ivftq::partition::DEFAULT_KMEANS_ITERS;
use ivftq::pq::residuals_of;
use ivftq::{pq_train, train_partition, IvfPqIndex, PqParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::preset::ExperimentPreset;
use crate::recall_of;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityVariant {
    pub label: String,
    pub trained_on: usize,
    pub recall: f64,
    pub train_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacitySeed {
    pub seed: u64,
    /// Prefix, random sample, full data.
    pub variants: [CapacityVariant; 3],
    pub bias: f64,
    pub capacity: f64,
    /// Binomial standard error `sqrt(p (1 - p) / n_queries)` at the mean
    /// recall of the three variants.
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityReport {
    pub preset: String,
    pub dataset: String,
    pub n_database: usize,
    pub n_train: usize,
    pub n_queries: usize,
    pub pq_bits_per_vec: u64,
    pub seeds: Vec<CapacitySeed>,
}

pub fn run_capacity_vs_bias(preset: &ExperimentPreset) -> Result<CapacityReport> {
    let spec = preset.require_stream()?;
    let pq_spec = preset.require_pq()?;
    let ds = preset.dataset.load()?;
    preset.check_dataset(&ds)?;
    let (d, k) = (ds.dim, preset.k);

    let mut seeds = Vec::new();
    let mut n_database = 0;
    let mut bits = 0;
    for &seed in &preset.seeds {
        let stream = make_stream(&ds.base, d, &spec.plan(seed))?;
        let mut full = stream.train.clone();
        for b in &stream.batches {
            full.extend_from_slice(b);
        }
        let queries = stream.transform_queries(&ds.queries)?;
        let truth = exact_topk(&full, &queries, d, k)?;
        let n = full.len() / d;
        let n0 = stream.train.len() / d;
        n_database = n;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pick = rand::seq::index::sample(&mut rng, n, n0).into_vec();
        pick.sort_unstable();
        let random: Vec<f32> = pick.iter().flat_map(|&i| full[i * d..(i + 1) * d].iter().copied()).collect();

        let fit = |label: &str, sample: &[f32]| -> Result<CapacityVariant> {
            let t = Instant::now();
            let partition = train_partition(sample, d, preset.n_lists, seed, DEFAULT_KMEANS_ITERS)?;
            let params = PqParams { max_train_points: pq_spec.max_train_points, ..PqParams::new(pq_spec.m, seed) };
            let codebook = pq_train(&residuals_of(&partition, sample), d, params)?;
            let train_secs = t.elapsed().as_secs_f64();
            let trained_on = codebook.trained_on();
            let mut index = IvfPqIndex::with_parts(partition, codebook)?;
            index.add_batch(&full, 0)?;
            let recall = recall_of(index.search_batch(&queries, k, preset.n_probe)?, &truth.ids, k)?;
            log::info!("capacity seed {seed} {label}: recall {recall:.4}");
            Ok(CapacityVariant { label: label.into(), trained_on, recall, train_secs })
        };
        let a = fit("prefix", &stream.train)?;
        let b = fit("random", &random)?;
        let c = fit("full", &full)?;
        bits = (pq_spec.m * 8) as u64;
        let p = (a.recall + b.recall + c.recall) / 3.0;
        let standard_error = (p * (1.0 - p) / ds.n_queries() as f64).sqrt();
        seeds.push(CapacitySeed { seed, bias: b.recall - a.recall, capacity: c.recall - b.recall, standard_error, variants: [a, b, c] });
    }
    Ok(CapacityReport {
        preset: preset.name.clone(),
        dataset: ds.name.clone(),
        n_database,
        n_train: spec.train_count,
        n_queries: ds.n_queries(),
        pq_bits_per_vec: bits,
        seeds,
    })
}
