//! Partition-based approximate nearest-neighbor search where a learned
//! probing model decides which partitions to scan, and where points likely
//! to sit in the long tail of a query's kNN are duplicated into a second
//! partition chosen by the same model.
//!
//! The pipeline mirrors a one-level meta index build:
//!
//! 1. [`partition::kmeans`] on a sample, then [`PartitionLayout::assign_hard`]
//!    over the full dataset.
//! 2. [`model::build_training_set`] labels sampled points with the
//!    partitions of their kNN; [`model::train`] fits the [`ProbingModel`].
//! 3. [`redundancy::plan_redundancy`] picks points with the largest
//!    predicted fan-out and [`redundancy::apply_redundancy`] stores one
//!    replica of each.
//! 4. [`retrieval`] plans and executes queries; [`bench`] sweeps knobs
//!    and writes the analysis reports.

pub mod bench;
pub mod codec;
pub mod dataset;
pub mod error;
pub mod model;
pub mod oracle;
pub mod partition;
pub mod redundancy;
pub mod retrieval;
pub mod synthetic;

pub use dataset::{l2_sq, Dataset};
pub use error::{Error, Result};
pub use model::ProbingModel;
pub use oracle::{GroundTruth, KnnResult};
pub use partition::{LayoutKind, PartitionLayout};
