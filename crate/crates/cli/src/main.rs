//! `ivftq`: quantizer design, index lifecycle, search, refresh, ablation,
//! theory checks and benchmarks. Data goes to stdout (JSON) or to `--out`;
//! diagnostics go to stderr.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{error::ErrorKind, Args, Parser, Subcommand, ValueEnum};
use ivftq::data::{make_synthetic_clusters, read_ivecs, read_vectors, Matrix};
use ivftq::eval::{exact_topk, recall_at_k, verify_amplification, verify_marginal, verify_theorem1};
use ivftq::index::BitPosition;
use ivftq::linalg::normalize_rows;
use ivftq::lloydmax::{eval_distortion_oracle, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use ivftq::{design_quantizer, generate_rotation, refresh, IndexConfig, IvfPqIndex, IvfTqIndex, PqParams, RefreshPolicy};
use ivftq_bench::{emit_report, ExperimentPreset, Format, Report};
use serde::Serialize;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "ivftq", version, about = "IVF index with a data-independent residual quantizer", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl OnOff {
    fn on(self) -> bool {
        self == OnOff::On
    }
}

#[derive(Args, Debug)]
struct OutArg {
    /// Write JSON output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Design a Lloyd-Max quantizer for N(0, 1/dim) and print it.
    DesignQuantizer {
        #[arg(long)]
        bits: u32,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
        max_iters: usize,
        #[command(flatten)]
        out: OutArg,
    },
    /// Build an index from an fvecs/bvecs file.
    Build {
        #[arg(long)]
        data: PathBuf,
        /// Index file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        bits: u32,
        /// Coarse lists; defaults to floor(sqrt(n)) clamped to [16, 4096].
        #[arg(long, conflicts_with = "flat")]
        nlists: Option<usize>,
        /// One list with a zero centroid: whole vectors are quantized.
        #[arg(long)]
        flat: bool,
        #[arg(long, value_enum, default_value_t = OnOff::On)]
        sign_bit: OnOff,
        #[arg(long)]
        keep_raw: bool,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        max_rows: Option<usize>,
    },
    /// Append vectors to an index; external ids continue from the current count.
    Add {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search an index; optionally score against an ivecs ground-truth file.
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 8)]
        nprobe: usize,
        #[arg(long, default_value_t = 0)]
        rerank: usize,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Print the bit accounting of an index.
    Accounting {
        #[arg(long)]
        index: PathBuf,
        #[command(flatten)]
        out: OutArg,
    },
    /// Flip one bit position in a fraction of stored fields and report the recall drop.
    AblateBits {
        #[arg(long)]
        index: PathBuf,
        /// Base vectors the index was built from, for exact ground truth.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// msb, lsb or sign.
        #[arg(long)]
        position: BitPosition,
        #[arg(long, default_value_t = 0.1)]
        fraction: f64,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 8)]
        nprobe: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Re-cluster the coarse partition and re-encode every vector.
    Refresh {
        #[arg(long)]
        index: PathBuf,
        /// Index file to write.
        #[arg(long)]
        out: PathBuf,
        /// Refresh only once this many vectors have been added since the
        /// last build or refresh; otherwise the index is written unchanged.
        #[arg(long)]
        every: Option<usize>,
        #[arg(long)]
        sample: Option<usize>,
        /// Cluster raw vectors when the index keeps them.
        #[arg(long)]
        use_raw: bool,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Build an IVF-PQ baseline index.
    PqBuild {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        nlists: Option<usize>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = ivftq::pq::DEFAULT_MAX_TRAIN_POINTS)]
        max_train: usize,
        #[arg(long)]
        max_rows: Option<usize>,
    },
    /// Refit the PQ codebook on every stored vector and re-encode.
    PqRetrain {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = ivftq::pq::DEFAULT_MAX_TRAIN_POINTS)]
        max_train: usize,
    },
    /// Empirical checks of the quantizer's distributional claims.
    #[command(subcommand)]
    Verify(Verify),
    /// Run an experiment preset.
    Bench(BenchArgs),
}

#[derive(Subcommand, Debug)]
enum Verify {
    /// KS distance of rotated coordinates from N(0, 1).
    Marginal {
        #[arg(long, default_value_t = 128)]
        dim: usize,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// High-probability reconstruction-error envelope over random unit vectors.
    Theorem1 {
        #[arg(long, default_value_t = 4)]
        bits: u32,
        #[arg(long, default_value_t = 128)]
        dim: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0.01)]
        delta: f64,
        #[arg(long, value_enum, default_value_t = OnOff::Off)]
        sign_bit: OnOff,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Flat-vs-IVF inner-product error ratio on clustered synthetic data.
    Amplification {
        #[arg(long, default_value_t = 20_000)]
        n: usize,
        #[arg(long, default_value_t = 128)]
        dim: usize,
        #[arg(long, default_value_t = 8)]
        clusters: usize,
        #[arg(long, default_value_t = 0.9)]
        spread: f32,
        #[arg(long, default_value_t = 4)]
        bits: u32,
        #[arg(long, default_value_t = 50)]
        queries: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Experiment {
    Static,
    Stream,
    Capacity,
    Recovery,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(value_enum)]
    experiment: Experiment,
    /// Built-in preset name or path to a JSON preset.
    #[arg(long)]
    preset: String,
    /// Comma-separated seeds overriding the preset's.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory; reports are printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report formats written to --out.
    #[arg(long, value_delimiter = ',', default_value = "json,text")]
    format: Vec<String>,
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

fn emit<T: Serialize>(value: &T, out: &OutArg) -> AnyResult<()> {
    let text = serde_json::to_string_pretty(value)?;
    match &out.out {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn load_rows(path: &Path, max_rows: Option<usize>) -> AnyResult<Matrix<f32>> {
    let m = read_vectors(path, max_rows)?;
    if m.count() == 0 {
        return Err(format!("{} holds no vectors", path.display()).into());
    }
    Ok(m)
}

fn default_lists(n: usize) -> usize {
    ((n as f64).sqrt().floor() as usize).clamp(16, 4096)
}

fn run(cmd: Command) -> AnyResult<()> {
    match cmd {
        Command::DesignQuantizer { bits, dim, tol, max_iters, out } => {
            let q = design_quantizer(bits, dim, tol, max_iters)?;
            let oracle = eval_distortion_oracle(&q, false);
            let oracle_sign = eval_distortion_oracle(&q, true);
            emit(&json!({ "quantizer": q, "oracle_distortion": oracle, "oracle_distortion_sign": oracle_sign }), &out)
        }
        Command::Build { data, out, bits, nlists, flat, sign_bit, keep_raw, seed, max_rows } => {
            let m = load_rows(&data, max_rows)?;
            let config = if flat { IndexConfig::flat(m.dim, bits) } else { IndexConfig::new(m.dim, bits, nlists.unwrap_or_else(|| default_lists(m.count()))) }
                .with_sign_bit(sign_bit.on())
                .with_raw(keep_raw)
                .with_seeds(seed, seed);
            let index = IvfTqIndex::build(config, &m.data)?;
            index.save(&out)?;
            emit(&json!({ "index": out, "n": index.len(), "config": index.config(), "accounting": index.bit_accounting() }), &OutArg { out: None })
        }
        Command::Add { index, data, out } => {
            let mut idx = IvfTqIndex::load(&index)?;
            let m = load_rows(&data, None)?;
            let first = idx.len() as u64;
            let range = idx.add_batch(&m.data, first)?;
            idx.save(&out)?;
            emit(&json!({ "index": out, "added": range.len(), "n": idx.len() }), &OutArg { out: None })
        }
        Command::Search { index, queries, k, nprobe, rerank, truth, out } => {
            let idx = IvfTqIndex::load(&index)?;
            let q = load_rows(&queries, None)?;
            let results = idx.search_batch(&q.data, k, nprobe, rerank)?;
            let recall = match truth {
                Some(t) => {
                    let gt = read_ivecs(&t)?;
                    let truth: Vec<Vec<u64>> = (0..gt.count()).map(|i| gt.row(i).iter().map(|&x| x as u64).collect()).collect();
                    let ids: Vec<Vec<u64>> = results.iter().map(|r| r.ids.clone()).collect();
                    Some(recall_at_k(&ids, &truth, k)?)
                }
                None => None,
            };
            emit(&json!({ "k": k, "n_probe": nprobe, "rerank_depth": rerank, "recall": recall, "results": results }), &out)
        }
        Command::Accounting { index, out } => emit(&IvfTqIndex::load(&index)?.bit_accounting(), &out),
        Command::AblateBits { index, data, queries, position, fraction, k, nprobe, seed, out } => {
            let mut idx = IvfTqIndex::load(&index)?;
            let base = load_rows(&data, Some(idx.len()))?;
            let q = load_rows(&queries, None)?;
            let gt = exact_topk(&base.data, &q.data, base.dim, k)?;
            let report = idx.bit_flip_ablation(position, fraction, &q.data, &gt.ids, k, nprobe, seed)?;
            emit(&report, &out)
        }
        Command::Refresh { index, out, every, sample, use_raw, seed } => {
            let mut idx = IvfTqIndex::load(&index)?;
            let mut policy = RefreshPolicy { sample_size: sample, use_raw_if_available: use_raw, seed, ..RefreshPolicy::default() };
            if let Some(n) = every {
                policy.trigger_every_n = n;
            }
            policy.validate(idx.n_lists())?;
            let added = idx.added_since_refresh();
            if every.is_some() && !policy.due(added) {
                idx.save(&out)?;
                return emit(&json!({ "skipped": true, "added_since_refresh": added, "trigger_every_n": policy.trigger_every_n }), &OutArg { out: None });
            }
            let report = refresh(&mut idx, &policy)?;
            idx.save(&out)?;
            emit(&report, &OutArg { out: None })
        }
        Command::PqBuild { data, out, m, nlists, seed, max_train, max_rows } => {
            let rows = load_rows(&data, max_rows)?;
            let params = PqParams { max_train_points: max_train, ..PqParams::new(m, seed) };
            let l = nlists.unwrap_or_else(|| default_lists(rows.count()));
            let idx = IvfPqIndex::build(&rows.data, rows.dim, l, seed, params)?;
            idx.save(&out)?;
            emit(&json!({ "index": out, "n": idx.len(), "n_lists": l, "m": m, "bits_per_vec": idx.codebook().bits_per_vec() }), &OutArg { out: None })
        }
        Command::PqRetrain { index, out, seed, max_train } => {
            let mut idx = IvfPqIndex::load(&index)?;
            let params = PqParams { max_train_points: max_train, ..PqParams::new(idx.codebook().m(), seed) };
            let stats = idx.retrain(params)?;
            idx.save(&out)?;
            emit(&json!({ "index": out, "seconds": stats.seconds, "trained_on": stats.trained_on, "reencoded": stats.reencoded }), &OutArg { out: None })
        }
        Command::Verify(v) => verify(v),
        Command::Bench(b) => bench(b),
    }
}

fn verify(v: Verify) -> AnyResult<()> {
    match v {
        Verify::Marginal { dim, trials, seed, out } => {
            let rot = generate_rotation(dim, seed)?;
            let r = verify_marginal(&rot, trials, seed);
            emit(&json!({ "report": r, "orthogonality_residual": rot.orthogonality_residual(), "pass": r.ks_statistic < 0.05 }), &out)
        }
        Verify::Theorem1 { bits, dim, trials, delta, sign_bit, seed, out } => {
            let q = ivftq::design(bits, dim)?;
            let rot = generate_rotation(dim, seed)?;
            let r = verify_theorem1(&q, &rot, trials, delta, sign_bit.on(), seed)?;
            let pass = r.holds;
            emit(&json!({ "report": r, "pass": pass }), &out)
        }
        Verify::Amplification { n, dim, clusters, spread, bits, queries, seed, out } => {
            let (rows, _) = make_synthetic_clusters(n, dim, clusters, spread, seed)?;
            let unit = normalize_rows(&rows, dim)?;
            let (q, _) = make_synthetic_clusters(queries, dim, clusters, spread, seed.wrapping_add(1))?;
            let ivf = IvfTqIndex::build(IndexConfig::new(dim, bits, clusters).with_seeds(seed, seed), &unit)?;
            let flat = IvfTqIndex::build(IndexConfig::flat(dim, bits).with_seeds(seed, seed), &unit)?;
            let r = verify_amplification(&ivf, &flat, &unit, &q)?;
            let pass = (r.measured_ratio - r.predicted_ratio).abs() <= 0.25 * r.predicted_ratio && r.max_identity_error <= 1e-6;
            emit(&json!({ "report": r, "pass": pass }), &out)
        }
    }
}

fn bench(b: BenchArgs) -> AnyResult<()> {
    let mut preset = ExperimentPreset::resolve(&b.preset)?;
    if let Some(seeds) = b.seeds {
        if seeds.is_empty() {
            return Err("--seeds needs at least one value".into());
        }
        preset.seeds = seeds;
    }
    let formats: Vec<Format> = b.format.iter().map(|f| f.parse()).collect::<Result<_, _>>()?;
    match b.experiment {
        Experiment::Static => write_report(&ivftq_bench::run_static(&preset)?, "static", &preset, b.out.as_deref(), &formats),
        Experiment::Stream => write_report(&ivftq_bench::run_streaming(&preset)?, "stream", &preset, b.out.as_deref(), &formats),
        Experiment::Capacity => write_report(&ivftq_bench::run_capacity_vs_bias(&preset)?, "capacity", &preset, b.out.as_deref(), &formats),
        Experiment::Recovery => write_report(&ivftq_bench::run_recovery(&preset)?, "recovery", &preset, b.out.as_deref(), &formats),
    }
}

fn write_report<R: Report>(report: &R, kind: &str, preset: &ExperimentPreset, out: Option<&Path>, formats: &[Format]) -> AnyResult<()> {
    match out {
        None => println!("{}", report.to_json()?),
        Some(dir) => {
            for &f in formats {
                let path = dir.join(format!("{kind}-{}.{}", preset.name, f.extension()));
                emit_report(report, f, &path)?;
                eprintln!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // Help and version go to stdout; everything else to stderr.
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
