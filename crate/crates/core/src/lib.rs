//! Deterministic simulator and analysis toolkit for semi-asynchronous
//! federated averaging (SAFA) and the FedAvg, FedCS and fully-local
//! baselines.
//!
//! The crate is split along the lines of what a simulated run needs:
//!
//! - [`learners`]: datasets, partitioning, local mini-batch training and
//!   accuracy definitions.
//! - [`protocol`]: lag-tolerant distribution, CFCFM selection, the
//!   cache/bypass aggregation and the per-round procedures of every protocol.
//! - [`env`]: client heterogeneity, crash sampling and the round timing model.
//! - [`metrics`]: EUR, SR, VV, futility and the selection-bias analysis.
//! - [`runner`]: configuration, experiments, sweeps and report emission.

pub mod env;
pub mod error;
pub mod learners;
pub mod metrics;
pub mod protocol;
pub mod rng;
pub mod runner;

pub use error::{Result, SimError};
