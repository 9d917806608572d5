//! IVF-TQ: an inverted-file index whose residuals are compressed with a
//! data-independent rotated Lloyd–Max scalar quantizer.

pub mod codes;
pub mod data;
pub mod error;
pub mod eval;
pub mod index;
pub mod kmeans;
pub mod linalg;
pub mod lloydmax;
pub mod partition;
pub mod pq;
pub mod refresh;
pub mod rotation;
pub mod topk;

pub use error::{Error, Result};
pub use index::{IndexConfig, IvfTqIndex, SearchResult, VectorCode};
pub use lloydmax::{design, design_quantizer, ScalarQuantizer};
pub use partition::{train_partition, CoarsePartition};
pub use pq::{pq_train, IvfPqIndex, PqCodebook, PqParams};
pub use refresh::{refresh, RefreshPolicy, RefreshReport};
pub use rotation::{generate_rotation, RotationMatrix};
