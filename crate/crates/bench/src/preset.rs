//! Named experiment configurations. Built-in presets live as JSON files in
//! `presets/` and are compiled in; any other JSON file with the same shape
//! can be loaded by path.

use std::path::{Path, PathBuf};

use ivftq::data::{make_deep_like, make_sift_like, Dataset, SiftLikeParams, StreamOrder, StreamPlan};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

pub const DEFAULT_SEEDS: [u64; 3] = [42, 123, 7777];

const BUILTIN: &[(&str, &str)] = &[
    ("siftsmall", include_str!("../presets/siftsmall.json")),
    ("stream-sift", include_str!("../presets/stream-sift.json")),
    ("stream-sift-shuffled", include_str!("../presets/stream-sift-shuffled.json")),
    ("capacity-sift", include_str!("../presets/capacity-sift.json")),
    ("recovery-deep", include_str!("../presets/recovery-deep.json")),
    ("smoke", include_str!("../presets/smoke.json")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Synthetic byte-valued SIFT-like descriptors.
    SiftLike {
        n_base: usize,
        n_queries: usize,
        seed: u64,
        #[serde(default)]
        params: SiftLikeParams,
    },
    /// Synthetic 96-d unit-norm descriptors.
    DeepLike { n_base: usize, n_queries: usize, seed: u64 },
    /// `<dir>/<prefix>_base.{fvecs,bvecs}` and `<dir>/<prefix>_query.*`.
    Files {
        dir: PathBuf,
        prefix: String,
        #[serde(default)]
        max_base: Option<usize>,
        #[serde(default)]
        max_queries: Option<usize>,
    },
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset> {
        Ok(match self {
            DatasetSpec::SiftLike { n_base, n_queries, seed, params } => make_sift_like(*n_base, *n_queries, *params, *seed)?,
            DatasetSpec::DeepLike { n_base, n_queries, seed } => make_deep_like(*n_base, *n_queries, *seed)?,
            DatasetSpec::Files { dir, prefix, max_base, max_queries } => Dataset::load_pair(dir, prefix, *max_base, *max_queries)?,
        })
    }
}

/// One index configuration in a static sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub label: String,
    pub bits: u32,
    #[serde(default = "yes")]
    pub use_sign_bit: bool,
    #[serde(default)]
    pub flat: bool,
    #[serde(default)]
    pub rerank_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub train_count: usize,
    pub batch_size: usize,
    pub n_batches: usize,
    pub order: StreamOrder,
}

impl StreamSpec {
    pub fn plan(&self, seed: u64) -> StreamPlan {
        StreamPlan {
            train_count: self.train_count,
            batch_size: self.batch_size,
            n_batches: self.n_batches,
            order: self.order,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PqSpec {
    pub m: usize,
    /// Training-sample cap for every codebook fit.
    pub max_train_points: usize,
    /// Run the retrain-per-batch arm alongside the stale one.
    #[serde(default = "yes")]
    pub retrain_arm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefreshSpec {
    pub trigger_every_n: usize,
    #[serde(default)]
    pub sample_size: Option<usize>,
    #[serde(default)]
    pub use_raw: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPreset {
    pub name: String,
    pub dataset: DatasetSpec,
    #[serde(default = "default_bits")]
    pub bits: u32,
    #[serde(default = "yes")]
    pub use_sign_bit: bool,
    pub n_lists: usize,
    pub n_probe: usize,
    #[serde(default)]
    pub n_probe_sweep: Vec<usize>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub rerank_depth: usize,
    #[serde(default)]
    pub variants: Vec<VariantSpec>,
    #[serde(default)]
    pub stream: Option<StreamSpec>,
    #[serde(default)]
    pub pq: Option<PqSpec>,
    #[serde(default)]
    pub refresh: Option<RefreshSpec>,
}

fn yes() -> bool {
    true
}

fn default_bits() -> u32 {
    4
}

fn default_k() -> usize {
    10
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

impl ExperimentPreset {
    pub fn builtin_names() -> Vec<&'static str> {
        BUILTIN.iter().map(|(n, _)| *n).collect()
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let (_, text) = BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| BenchError::preset(format!("unknown preset {name:?}; built-in presets: {}", Self::builtin_names().join(", "))))?;
        Self::from_json(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: ExperimentPreset = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// A built-in name, or else a path to a JSON preset.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if BUILTIN.iter().any(|(n, _)| *n == name_or_path) {
            Self::builtin(name_or_path)
        } else if Path::new(name_or_path).exists() {
            Self::from_file(name_or_path)
        } else {
            Err(BenchError::preset(format!(
                "{name_or_path:?} is neither a built-in preset ({}) nor a readable file",
                Self::builtin_names().join(", ")
            )))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_lists == 0 || self.n_probe == 0 || self.k == 0 {
            return Err(BenchError::preset("n_lists, n_probe and k must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(BenchError::preset("at least one seed is required"));
        }
        if let Some(s) = &self.stream {
            if s.train_count == 0 {
                return Err(BenchError::preset("stream.train_count must be positive"));
            }
        }
        if let Some(r) = &self.refresh {
            if r.trigger_every_n == 0 {
                return Err(BenchError::preset("refresh.trigger_every_n must be positive"));
            }
        }
        Ok(())
    }

    pub(crate) fn require_stream(&self) -> Result<&StreamSpec> {
        self.stream.as_ref().ok_or_else(|| BenchError::preset(format!("preset {:?} has no stream section", self.name)))
    }

    pub(crate) fn require_pq(&self) -> Result<&PqSpec> {
        self.pq.as_ref().ok_or_else(|| BenchError::preset(format!("preset {:?} has no pq section", self.name)))
    }

    /// Checks that the dataset can feed the stream plan.
    pub(crate) fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if let Some(s) = &self.stream {
            let need = s.train_count + s.batch_size * s.n_batches;
            if ds.n_base() < need {
                return Err(BenchError::preset(format!(
                    "preset {:?} streams {need} rows but dataset {:?} has {}",
                    self.name,
                    ds.name,
                    ds.n_base()
                )));
            }
        }
        if let Some(pq) = &self.pq {
            if !ds.dim.is_multiple_of(pq.m) {
                return Err(BenchError::preset(format!("dimension {} is not divisible by pq.m = {}", ds.dim, pq.m)));
            }
        }
        if ds.n_queries() == 0 {
            return Err(BenchError::preset("dataset has no queries"));
        }
        Ok(())
    }
}
