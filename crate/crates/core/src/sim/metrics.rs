//! Summary metrics of a trace, written as a flat `key=value` file.

use std::fmt::Write as _;

use super::scenario::Scenario;
use super::trace::{Trace, TraceRow};
use crate::stability::Scheme;
use crate::JointVector;

/// Synchronization tolerance for the settling time (rad).
pub const SETTLE_TOL: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metrics {
    pub rows: usize,
    pub final_time: f64,
    /// `max_i |q_m − (q_si − γ_i)|` at the last row.
    pub final_sync_error: f64,
    pub max_sync_error: f64,
    /// First time after which the sync error stays below [`SETTLE_TOL`];
    /// `None` when it never settles.
    pub settling_time: Option<f64>,
    /// Largest joint speed component at the last row.
    pub final_max_qd: f64,
    /// Scheme-A control updates per manipulator (master first).
    pub control_updates: Vec<usize>,
    /// Scheme-B trigger firings per manipulator.
    pub comm_fires: Vec<usize>,
    pub forward_transmissions: usize,
    pub backward_transmissions: usize,
    pub arbitration_instants: usize,
    pub min_inter_event: Option<f64>,
    pub mean_inter_event: Option<f64>,
    /// Transmissions over the always-transmit count `(N+1)·rows`.
    pub bandwidth_ratio: f64,
    pub max_theta_hat_norm: f64,
    pub all_finite: bool,
    pub within_envelope: Option<bool>,
}

pub fn sync_error(row: &TraceRow, offsets: &[JointVector]) -> f64 {
    row.slaves
        .iter()
        .zip(offsets)
        .map(|(s, g)| (row.master.q - (s.q - g)).norm())
        .fold(0.0, f64::max)
}

fn row_is_finite(row: &TraceRow) -> bool {
    row.agents().all(|a| {
        [a.q, a.qd, a.x, a.xd, a.tau, a.delta]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
            && a.theta_hat.iter().all(|v| v.is_finite())
    }) && row.eta.iter().all(|e| e.iter().all(|v| v.is_finite()))
}

fn row_peak(row: &TraceRow) -> f64 {
    row.agents()
        .flat_map(|a| [a.q.amax(), a.qd.amax(), a.x.amax(), a.xd.amax()])
        .fold(0.0, f64::max)
}

/// Event times per manipulator: control updates (scheme A) or
/// transmissions (scheme B).
pub fn event_times(trace: &Trace, scheme: Scheme) -> Vec<Vec<f64>> {
    let n = trace.rows.first().map_or(0, |r| r.slaves.len() + 1);
    let mut out = vec![Vec::new(); n];
    for row in &trace.rows {
        for (j, a) in row.agents().enumerate() {
            let ev = match scheme {
                Scheme::A => a.control_event,
                Scheme::B => a.sent,
            };
            if ev {
                out[j].push(row.t);
            }
        }
    }
    out
}

pub fn compute_metrics(scenario: &Scenario, trace: &Trace) -> Metrics {
    let Some(last) = trace.rows.last() else {
        return Metrics {
            all_finite: true,
            ..Default::default()
        };
    };
    let offsets = scenario.offsets();
    let n = last.slaves.len() + 1;
    let mut m = Metrics {
        rows: trace.len(),
        final_time: last.t,
        final_sync_error: sync_error(last, &offsets),
        final_max_qd: last.agents().map(|a| a.qd.amax()).fold(0.0, f64::max),
        control_updates: vec![0; n],
        comm_fires: vec![0; n],
        all_finite: true,
        ..Default::default()
    };
    let mut last_violation: Option<usize> = None;
    let mut peak: f64 = 0.0;
    for (k, row) in trace.rows.iter().enumerate() {
        let e = sync_error(row, &offsets);
        m.max_sync_error = m.max_sync_error.max(e);
        if !(e < SETTLE_TOL) {
            last_violation = Some(k);
        }
        for (j, a) in row.agents().enumerate() {
            m.control_updates[j] += a.control_event as usize;
            m.comm_fires[j] += a.comm_fire as usize;
            if a.sent {
                if j == 0 {
                    m.forward_transmissions += 1;
                } else {
                    m.backward_transmissions += 1;
                }
            }
            let th: f64 = a.theta_hat.iter().map(|v| v * v).sum::<f64>().sqrt();
            m.max_theta_hat_norm = m.max_theta_hat_norm.max(th);
        }
        m.arbitration_instants += row.tod as usize;
        m.all_finite &= row_is_finite(row);
        peak = peak.max(row_peak(row));
    }
    m.settling_time = match last_violation {
        None => Some(trace.rows[0].t),
        Some(k) if k + 1 < trace.len() => Some(trace.rows[k + 1].t),
        Some(_) => None,
    };
    let mut intervals = Vec::new();
    for times in event_times(trace, scenario.scheme) {
        intervals.extend(times.windows(2).map(|w| w[1] - w[0]));
    }
    if !intervals.is_empty() {
        m.min_inter_event = Some(intervals.iter().copied().fold(f64::INFINITY, f64::min));
        m.mean_inter_event = Some(intervals.iter().sum::<f64>() / intervals.len() as f64);
    }
    m.bandwidth_ratio =
        (m.forward_transmissions + m.backward_transmissions) as f64 / (n * trace.len()) as f64;
    m.within_envelope = scenario.envelope.map(|e| peak <= e);
    m
}

impl Metrics {
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "rows={}", self.rows);
        let _ = writeln!(s, "final_time={}", self.final_time);
        let _ = writeln!(s, "final_sync_error={}", self.final_sync_error);
        let _ = writeln!(s, "max_sync_error={}", self.max_sync_error);
        let _ = writeln!(s, "settling_time={}", opt(self.settling_time));
        let _ = writeln!(s, "final_max_qd={}", self.final_max_qd);
        let _ = writeln!(s, "control_updates={}", list(&self.control_updates));
        let _ = writeln!(s, "comm_fires={}", list(&self.comm_fires));
        let _ = writeln!(s, "forward_transmissions={}", self.forward_transmissions);
        let _ = writeln!(s, "backward_transmissions={}", self.backward_transmissions);
        let _ = writeln!(s, "arbitration_instants={}", self.arbitration_instants);
        let _ = writeln!(s, "min_inter_event={}", opt(self.min_inter_event));
        let _ = writeln!(s, "mean_inter_event={}", opt(self.mean_inter_event));
        let _ = writeln!(s, "bandwidth_ratio={}", self.bandwidth_ratio);
        let _ = writeln!(s, "max_theta_hat_norm={}", self.max_theta_hat_norm);
        let _ = writeln!(s, "all_finite={}", self.all_finite);
        let _ = writeln!(
            s,
            "within_envelope={}",
            self.within_envelope.map_or("none".into(), |b| b.to_string())
        );
        s
    }
}
