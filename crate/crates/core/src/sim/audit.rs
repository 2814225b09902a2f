//! Post-hoc audits of a recorded trace: arbitration optimality and reset
//! consistency, trigger soundness, minimum inter-event times, and the
//! Lyapunov functional along the trajectory.

use std::fmt::Write as _;

use nalgebra::DVector;

use super::engine::adaptation_inverse;
use super::scenario::Scenario;
use super::trace::Trace;
use crate::controllers::{
    control_regressor, control_trigger_value, sync_vars, trigger_scheme_b, y_times, zeno_bound, zeno_bound_comm,
};
use crate::dynamics::PlantState;
use crate::network::{reset_eta, weighted_norm, Arbitration};
use crate::observers::ObserverState;
use crate::stability::lyapunov::{eval_at, required_history, AgentSample, Bookkeeping, LyapunovContext, LyapunovSample};
use crate::stability::search::{feasibility_search, ScalarVars};
use crate::stability::{monitor_reset_nongrowth, ResetReport, Scheme};
use crate::{Error, JointMatrix, JointVector, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TodAudit {
    pub instants: usize,
    /// Instants where the grant does not attain the maximum weighted norm.
    pub argmax_violations: usize,
    /// Instants where recomputed η differs from the recorded η in any bit.
    pub reset_mismatches: usize,
    /// Scheme A: largest gap between consecutive instants.
    pub max_gap: f64,
}

impl TodAudit {
    pub fn passed(&self) -> bool {
        self.argmax_violations == 0 && self.reset_mismatches == 0
    }
}

/// Checks every arbitration instant against a brute-force argmax (TOD only)
/// and replays the η recursion from the recorded observer outputs.
pub fn audit_tod(trace: &Trace, weight: f64, mode: Arbitration) -> TodAudit {
    let mut a = TodAudit::default();
    let mut prev: Option<(Vec<JointVector>, Vec<JointVector>, usize, f64)> = None;
    for row in trace.rows.iter().filter(|r| r.tod) {
        a.instants += 1;
        let Some(granted) = row.granted else {
            a.argmax_violations += 1;
            continue;
        };
        let x: Vec<JointVector> = row.slaves.iter().map(|s| s.x).collect();
        let q = JointMatrix::identity() * weight;
        if mode == Arbitration::Tod {
            let best = row.eta.iter().map(|e| weighted_norm(e, &q)).fold(f64::NEG_INFINITY, f64::max);
            if weighted_norm(&row.eta[granted], &q) < best {
                a.argmax_violations += 1;
            }
        }
        let expect: Vec<JointVector> = match &prev {
            None => x.iter().map(|v| -v).collect(),
            Some((eta, x_prev, i_star, _)) => reset_eta(eta, *i_star, x_prev, &x),
        };
        let same = expect
            .iter()
            .zip(&row.eta)
            .all(|(u, v)| u.iter().zip(v.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        if !same {
            a.reset_mismatches += 1;
        }
        if let Some((.., t_prev)) = prev {
            a.max_gap = a.max_gap.max(row.t - t_prev);
        }
        prev = Some((row.eta.clone(), x, granted, row.t));
    }
    a
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriggerAudit {
    pub rows_checked: usize,
    /// Rows where the trigger function was non-negative but no event fired.
    pub missed: usize,
    /// Rows where an event fired with a negative trigger function.
    pub spurious: usize,
}

impl TriggerAudit {
    pub fn passed(&self) -> bool {
        self.missed == 0 && self.spurious == 0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ZenoAudit {
    pub events: usize,
    /// Intervals below the analytic bound.
    pub violations: usize,
    pub min_interval: Option<f64>,
    /// Smallest `interval − max(dt, bound) + dt`.
    pub min_margin: Option<f64>,
    /// Derivative bound used per manipulator.
    pub rate_bounds: Vec<f64>,
}

impl ZenoAudit {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn plant_obs(a: &super::trace::AgentRow) -> (PlantState, ObserverState) {
    (PlantState::new(a.q, a.qd), ObserverState::new(a.x, a.xd))
}

/// Replays the trigger functions from the recorded states.
pub fn audit_triggers(scenario: &Scenario, trace: &Trace) -> TriggerAudit {
    let mut audit = TriggerAudit::default();
    let n = scenario.slave_count() + 1;
    match scenario.scheme {
        Scheme::A => {
            for j in 0..n {
                let (gains, model) = if j == 0 {
                    (scenario.master_gains(), scenario.master_model())
                } else {
                    (scenario.slave_gains(j - 1), scenario.slave_model(j - 1))
                };
                let mut held: Option<(JointVector, JointVector)> = None;
                for row in &trace.rows {
                    let a = row.agents().nth(j).expect("agent");
                    let (plant, obs) = plant_obs(a);
                    let sync = sync_vars(gains.lambda, &plant, &obs);
                    let y = control_regressor(&model, gains.lambda, &plant, &sync);
                    let th = DVector::from_column_slice(&a.theta_hat);
                    let yt = y_times(&y, &th);
                    if let Some((h_yt, h_r)) = held {
                        audit.rows_checked += 1;
                        let v = control_trigger_value(
                            &gains.control_trigger,
                            gains.kappa,
                            &(yt - h_yt),
                            &(sync.r - h_r),
                            &sync.r,
                            row.t,
                        );
                        if v >= 0.0 && !a.control_event {
                            audit.missed += 1;
                        }
                        if v < 0.0 && a.control_event {
                            audit.spurious += 1;
                        }
                    }
                    if a.control_event {
                        held = Some((yt, sync.r));
                    }
                }
            }
        }
        Scheme::B => {
            let p_m = scenario.network.forward.rate_bound();
            let p_s = scenario.network.backward.rate_bound();
            let latch = scenario.network.latch_lost_triggers;
            for j in 0..n {
                let gains = if j == 0 {
                    scenario.master_gains()
                } else {
                    scenario.slave_gains(j - 1)
                };
                let p = if j == 0 { p_m } else { p_s };
                let mut baseline = JointVector::zeros();
                for (k, row) in trace.rows.iter().enumerate() {
                    let a = row.agents().nth(j).expect("agent");
                    let obs = ObserverState::new(a.x, a.xd);
                    let d = trigger_scheme_b(&gains.comm_trigger, gains.beta, &obs, &baseline, row.t, p);
                    if k > 0 {
                        audit.rows_checked += 1;
                        if d.fire && !a.comm_fire && !a.sent {
                            audit.missed += 1;
                        }
                        if !d.fire && a.comm_fire {
                            audit.spurious += 1;
                        }
                    }
                    // Every node samples at t = 0; losing slaves discard.
                    if a.sent || (j > 0 && !latch && (a.comm_fire || k == 0)) {
                        baseline = a.x;
                    }
                }
            }
        }
    }
    audit
}

/// Checks every inter-event interval against the analytic minimum dwell.
pub fn audit_zeno(scenario: &Scenario, trace: &Trace) -> Result<ZenoAudit> {
    let mut audit = ZenoAudit::default();
    let dt = scenario.dt;
    let n = scenario.slave_count() + 1;
    let mut margins = Vec::new();
    let mut intervals = Vec::new();
    for j in 0..n {
        let (gains, model) = if j == 0 {
            (scenario.master_gains(), scenario.master_model())
        } else {
            (scenario.slave_gains(j - 1), scenario.slave_model(j - 1))
        };
        // Events and the instants that re-arm the trigger.
        let mut pairs = Vec::new();
        let mut rate: f64 = 0.0;
        match scenario.scheme {
            Scheme::A => {
                let mut prev: Option<(JointVector, JointVector)> = None;
                let mut last_event: Option<f64> = None;
                for row in &trace.rows {
                    let a = row.agents().nth(j).expect("agent");
                    let (plant, obs) = plant_obs(a);
                    let sync = sync_vars(gains.lambda, &plant, &obs);
                    let y = control_regressor(&model, gains.lambda, &plant, &sync);
                    let yt = y_times(&y, &DVector::from_column_slice(&a.theta_hat));
                    if let Some((p_yt, p_r)) = prev {
                        rate = rate.max(((yt - p_yt).norm() + gains.kappa * (sync.r - p_r).norm()) / dt);
                    }
                    prev = Some((yt, sync.r));
                    if a.control_event {
                        if let Some(t0) = last_event {
                            pairs.push((t0, row.t));
                        }
                        last_event = Some(row.t);
                    }
                }
            }
            Scheme::B => {
                let latch = scenario.network.latch_lost_triggers;
                let mut rearm: Option<f64> = None;
                for row in &trace.rows {
                    let a = row.agents().nth(j).expect("agent");
                    rate = rate.max(a.xd.norm());
                    if a.comm_fire {
                        if let Some(t0) = rearm {
                            pairs.push((t0, row.t));
                        }
                    }
                    if a.sent || (a.comm_fire && !latch && j > 0) {
                        rearm = Some(row.t);
                    }
                }
            }
        }
        audit.rate_bounds.push(rate);
        audit.events += pairs.len();
        for (t0, t1) in pairs {
            let bound = if rate > 0.0 {
                match scenario.scheme {
                    Scheme::A => zeno_bound(&gains.control_trigger, rate, t1)?,
                    Scheme::B => zeno_bound_comm(&gains.comm_trigger, rate, t1)?,
                }
            } else {
                f64::INFINITY
            };
            let interval = t1 - t0;
            let margin = interval - dt.max(bound) + dt;
            // Events are quantized to the grid, so allow rounding in t.
            if margin < -1e-9 {
                audit.violations += 1;
            }
            margins.push(margin);
            intervals.push(interval);
        }
    }
    audit.min_interval = intervals.iter().copied().reduce(f64::min);
    audit.min_margin = margins.iter().copied().reduce(f64::min);
    Ok(audit)
}

/// Builds the Lyapunov history from a trace.
/// Functional inputs per row. Rows before `t = 0` hold the initial
/// function of the delayed system (every manipulator at rest at its initial
/// pose, nothing transmitted yet), long enough that the first instants have
/// a full history window.
pub fn lyapunov_history(scenario: &Scenario, trace: &Trace) -> Vec<LyapunovSample> {
    let rows = &trace.rows;
    let tod_times: Vec<f64> = rows.iter().filter(|r| r.tod).map(|r| r.t).collect();
    let h = scenario.network.h;
    let dt = scenario.dt;
    let agent = |a: &super::trace::AgentRow| AgentSample {
        q: a.q,
        qd: a.qd,
        x: a.x,
        xd: a.xd,
        theta_hat: DVector::from_column_slice(&a.theta_hat),
    };
    let mut out = Vec::with_capacity(rows.len());
    if let Some(first) = rows.first() {
        let net = &scenario.network;
        let window = required_history(&scenario.stability_problem(), net.forward.max.max(net.backward.max));
        let pad = (window / dt).ceil() as usize + 1;
        let at_rest = |a: &super::trace::AgentRow| AgentSample {
            qd: JointVector::zeros(),
            xd: JointVector::zeros(),
            ..agent(a)
        };
        for j in (1..=pad).rev() {
            let t = first.t - j as f64 * dt;
            out.push(LyapunovSample {
                t,
                master: at_rest(&first.master),
                slaves: first.slaves.iter().map(at_rest).collect(),
                book: Bookkeeping {
                    eta: first.slaves.iter().map(|s| -s.x).collect(),
                    winner: None,
                    s_k: first.t - h,
                    s_next: first.t,
                },
                delay_m: net.forward.delay(t),
                delay_s: net.backward.delay(t),
                delta_m: JointVector::zeros(),
                delta_s: vec![JointVector::zeros(); first.slaves.len()],
            });
        }
    }
    let mut next = 0usize;
    out.extend(rows.iter().map(|row| {
        while next < tod_times.len() && tod_times[next] <= row.t {
            next += 1;
        }
        let s_k = if next > 0 { tod_times[next - 1] } else { row.t };
        let s_next = tod_times.get(next).copied().unwrap_or(s_k + h);
        LyapunovSample {
            t: row.t,
            master: agent(&row.master),
            slaves: row.slaves.iter().map(agent).collect(),
            book: Bookkeeping {
                eta: row.eta.clone(),
                winner: row.granted,
                s_k,
                s_next,
            },
            delay_m: scenario.network.forward.delay(row.t),
            delay_s: scenario.network.backward.delay(row.t),
            delta_m: row.master.delta,
            delta_s: row.slaves.iter().map(|s| s.delta).collect(),
        }
    }));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovAudit {
    pub vars: ScalarVars,
    pub certificate_feasible: bool,
    pub rows_evaluated: usize,
    /// Smallest stored component over all evaluated rows.
    pub min_component: f64,
    pub reset: ResetReport,
    /// Largest `V(t_k) − V(t_{k−1})` between transmission instants.
    pub max_flow_increase: f64,
    pub max_flow_increase_at: Option<f64>,
    pub v_initial: Option<f64>,
    pub v_final: Option<f64>,
    pub tolerance: f64,
}

impl LyapunovAudit {
    pub fn components_nonnegative(&self) -> bool {
        self.min_component >= 0.0
    }

    pub fn flow_nonincreasing(&self) -> bool {
        self.max_flow_increase <= self.tolerance
    }

    pub fn passed(&self) -> bool {
        self.certificate_feasible && self.components_nonnegative() && self.reset.passed() && self.flow_nonincreasing()
    }
}

pub fn lyapunov_context(scenario: &Scenario, vars: ScalarVars) -> Result<LyapunovContext> {
    let model = scenario.master_model();
    if (0..scenario.slave_count()).any(|i| scenario.slave_model(i) != model) {
        return Err(Error::InvalidScenario(
            "the Lyapunov audit assumes identical manipulator models".into(),
        ));
    }
    let g = scenario.master_gains();
    if (0..scenario.slave_count()).any(|i| scenario.slave_gains(i).adapt_gain != g.adapt_gain) {
        return Err(Error::InvalidScenario(
            "the Lyapunov audit assumes a common adaptation gain".into(),
        ));
    }
    Ok(LyapunovContext {
        problem: scenario.stability_problem(),
        vars,
        gamma_inv: adaptation_inverse(&g, model.param_count()),
        offsets: scenario.offsets(),
        model,
    })
}

/// Searches decision variables for the scenario, then evaluates the
/// functional on every trace row.
pub fn audit_lyapunov(scenario: &Scenario, trace: &Trace, tolerance: f64) -> Result<LyapunovAudit> {
    let report = feasibility_search(&scenario.stability_problem())?;
    let ctx = lyapunov_context(scenario, report.vars)?;
    let history = lyapunov_history(scenario, trace);
    let reset = monitor_reset_nongrowth(&ctx, &history, tolerance)?;
    let mut audit = LyapunovAudit {
        vars: report.vars,
        certificate_feasible: report.lmis_feasible(),
        rows_evaluated: 0,
        min_component: f64::INFINITY,
        reset,
        max_flow_increase: f64::NEG_INFINITY,
        max_flow_increase_at: None,
        v_initial: None,
        v_final: None,
        tolerance,
    };
    let start = trace.rows.first().map_or(0.0, |r| r.t);
    let mut prev: Option<f64> = None;
    for k in 0..history.len() {
        if history[k].t < start {
            continue;
        }
        let v = match eval_at(&ctx, &history, k, &history[k].book) {
            Ok(v) => v,
            Err(Error::InsufficientHistory { .. }) => continue,
            Err(e) => return Err(e),
        };
        audit.rows_evaluated += 1;
        audit.min_component = audit.min_component.min(v.min_component());
        let total = v.total();
        audit.v_initial.get_or_insert(total);
        audit.v_final = Some(total);
        let reset_here = k > 0 && history[k].book != history[k - 1].book;
        if let (Some(p), false) = (prev, reset_here) {
            let inc = total - p;
            if inc > audit.max_flow_increase {
                audit.max_flow_increase = inc;
                audit.max_flow_increase_at = Some(history[k].t);
            }
        }
        prev = Some(total);
    }
    if audit.rows_evaluated == 0 {
        audit.min_component = 0.0;
        audit.max_flow_increase = 0.0;
    }
    Ok(audit)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub tod: TodAudit,
    pub triggers: TriggerAudit,
    pub zeno: ZenoAudit,
    pub lyapunov: Option<LyapunovAudit>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.tod.passed()
            && self.triggers.passed()
            && self.zeno.passed()
            && self.lyapunov.as_ref().is_none_or(LyapunovAudit::passed)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
        let _ = writeln!(s, "tod_instants={}", self.tod.instants);
        let _ = writeln!(s, "tod_argmax_violations={}", self.tod.argmax_violations);
        let _ = writeln!(s, "tod_reset_mismatches={}", self.tod.reset_mismatches);
        let _ = writeln!(s, "tod_max_gap={}", self.tod.max_gap);
        let _ = writeln!(s, "trigger_rows_checked={}", self.triggers.rows_checked);
        let _ = writeln!(s, "trigger_missed={}", self.triggers.missed);
        let _ = writeln!(s, "trigger_spurious={}", self.triggers.spurious);
        let _ = writeln!(s, "zeno_events={}", self.zeno.events);
        let _ = writeln!(s, "zeno_violations={}", self.zeno.violations);
        let _ = writeln!(s, "zeno_min_interval={}", opt(self.zeno.min_interval));
        let _ = writeln!(s, "zeno_min_margin={}", opt(self.zeno.min_margin));
        if let Some(l) = &self.lyapunov {
            let _ = writeln!(s, "lyapunov_certificate_feasible={}", l.certificate_feasible);
            let _ = writeln!(s, "lyapunov_rows={}", l.rows_evaluated);
            let _ = writeln!(s, "lyapunov_min_component={}", l.min_component);
            let _ = writeln!(s, "lyapunov_reset_instants={}", l.reset.instants);
            let _ = writeln!(s, "lyapunov_reset_skipped={}", l.reset.skipped);
            let _ = writeln!(s, "lyapunov_reset_max_jump={}", l.reset.max_jump);
            let _ = writeln!(s, "lyapunov_reset_max_abs_jump={}", l.reset.max_abs_jump);
            let _ = writeln!(s, "lyapunov_max_flow_increase={}", l.max_flow_increase);
            let _ = writeln!(s, "lyapunov_v_initial={}", opt(l.v_initial));
            let _ = writeln!(s, "lyapunov_v_final={}", opt(l.v_final));
        }
        let _ = writeln!(s, "passed={}", self.passed());
        s
    }
}

pub fn audit_trace(scenario: &Scenario, trace: &Trace, with_lyapunov: bool) -> Result<AuditReport> {
    Ok(AuditReport {
        tod: audit_tod(trace, scenario.network.weight, scenario.network.arbitration),
        triggers: audit_triggers(scenario, trace),
        zeno: audit_zeno(scenario, trace)?,
        lyapunov: if with_lyapunov {
            Some(audit_lyapunov(scenario, trace, 1e-6)?)
        } else {
            None
        },
    })
}
