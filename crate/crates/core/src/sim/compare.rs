//! Side-by-side runs of one scenario under different arbiters.

use std::fmt::Write as _;

use super::engine::run_scenario;
use super::metrics::{compute_metrics, Metrics};
use super::scenario::Scenario;
use super::trace::Trace;
use crate::network::Arbitration;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonEntry {
    pub arbitration: Arbitration,
    pub metrics: Metrics,
    pub trace: Trace,
}

pub fn arbitration_name(a: Arbitration) -> &'static str {
    match a {
        Arbitration::Tod => "tod",
        Arbitration::Rr => "rr",
    }
}

pub fn compare_schedulers(scenario: &Scenario, modes: &[Arbitration]) -> Result<Vec<ComparisonEntry>> {
    modes
        .iter()
        .map(|&mode| {
            let mut sc = scenario.clone();
            sc.network.arbitration = mode;
            let trace = run_scenario(&sc)?;
            let metrics = compute_metrics(&sc, &trace);
            Ok(ComparisonEntry {
                arbitration: mode,
                metrics,
                trace,
            })
        })
        .collect()
}

/// `key=value` lines prefixed by the arbiter name.
pub fn comparison_kv(entries: &[ComparisonEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        let name = arbitration_name(e.arbitration);
        for line in e.metrics.to_kv().lines() {
            let _ = writeln!(s, "{name}.{line}");
        }
    }
    s
}
