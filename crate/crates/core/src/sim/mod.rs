//! Scenario execution, traces, metrics and audits.

pub mod audit;
pub mod compare;
pub mod engine;
pub mod force;
pub mod integrate;
pub mod metrics;
pub mod scenario;
pub mod trace;

pub use audit::{audit_trace, AuditReport};
pub use compare::compare_schedulers;
pub use engine::{run_scenario, Agent, Simulation};
pub use force::ForceProfile;
pub use metrics::{compute_metrics, Metrics};
pub use scenario::{ManipulatorGains, Scenario};
pub use trace::{Trace, TraceRow};
