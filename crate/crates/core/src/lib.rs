//! Discrete-event simulator of Wi-Fi DCF channel contention between
//! overlapping BSSs, with binary exponential (BEB), deterministic (DB) and
//! token-ordered "It's Your Turn" (IYT) backoff.
//!
//! Layers, bottom up: [`engine`] (clock and event queue), [`phy`]
//! (propagation, CCA, capture), [`backoff`] (policies), [`mac`] (countdown
//! and exchange timeline), [`scenario`] (deployments), [`sim`] (the run
//! loop), [`metrics`] (records, statistics, export).

pub mod backoff;
pub mod config;
pub mod engine;
pub mod mac;
pub mod metrics;
pub mod phy;
pub mod scenario;
pub mod sim;

pub use backoff::{BssId, PolicyKind, PolicyParams};
pub use config::{ConfigError, RunConfig};
pub use engine::SimTime;
pub use metrics::{aggregate, ExperimentSummary, RunMetrics};
pub use scenario::{Deployment, ExperimentKind};
pub use sim::{simulate, simulate_deployment, RunOutput, SimError};
