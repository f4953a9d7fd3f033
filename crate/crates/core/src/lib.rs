//! Residual dynamic mode decomposition.
//!
//! Exact DMD and kernelized EDMD eigendecompositions with dual least-squares
//! residuals, pseudospectra on grids, and residual-ordered Koopman mode
//! decompositions for compression and forecasting.

// Index loops mirror the matrix notation; `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod cli;
pub mod error;
pub mod exact;
pub mod kedmd;
pub mod kernel;
pub mod linalg;
pub mod oracle;
pub mod selftest;
pub mod snapshot;
pub mod spectral;
pub mod synthetic;

pub use error::{Error, Result};
pub use exact::{exact_dmd, exact_pseudo_point, naive_projected_residual, ExactDmdResult};
pub use kedmd::{eval_dictionary_at, kedmd, kedmd_pseudo_point, naive_kernel_residual, KedmdResult};
pub use kernel::{KernelKind, KernelSpec};
pub use snapshot::{SnapshotPairs, TrajectorySet};

pub use faer::c64;
