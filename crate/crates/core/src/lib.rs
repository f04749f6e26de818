//! Simulator for joint allocation of processing ability and bandwidth
//! across multiple centers.
//!
//! A request needs both resource types at once, from a single center, for a
//! fixed holding time. Center selection policies live in [`policy`], the
//! event loop and the delayed fill-up mechanism in [`engine`], and the
//! evaluation quantities (loss probability, utilization, fairness) in
//! [`metrics`]. [`sweep`] runs replicated parameter sweeps and writes CSV.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod engine;
pub mod metrics;
pub mod policy;
pub mod resource;
pub mod sweep;
pub mod timeline;
pub mod workload;

pub use config::{load_config, ConfigError, ScenarioConfig};
pub use engine::{run_scripted, run_simulation, Simulation, SimulationError};
pub use metrics::{summarize, RunMetrics, Trace};
pub use policy::Method;
pub use resource::{
    AllocationOutcome, Center, CenterId, Request, RequestId, ResourceType, ResourceVector, UserId,
};
pub use workload::{parse_pattern, PatternSpec, UserWorkload};
