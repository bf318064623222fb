//! Marginal likelihood (evidence) estimation for conjugate Gaussian finite
//! mixtures and Dirichlet process mixtures.

// NaN-rejecting comparisons such as `!(x > 0.0)` are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod conjugate;
pub mod dpm;
pub mod error;
pub mod estimate;
pub mod fm;
pub mod harness;
pub mod mcstats;
pub mod oracle;
pub mod partitions;
pub mod rng;

pub use conjugate::{ClusterSuffStats, NIGPrior};
pub use error::{EvidenceError, Result};
pub use partitions::{Allocation, CanonicalPartition};
pub use estimate::{EstimatorId, EvidenceEstimate};
