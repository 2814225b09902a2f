//! Fixed-step simulation loop.
//!
//! Per step at `t = k·dt`: deliver due messages, sample and arbitrate,
//! evaluate triggers and torques, record the row, adapt, then integrate
//! plant and observer states with RK4 holding every network signal and
//! (scheme A) the control torque constant over the step.

use nalgebra::DMatrix;

use super::force::ForceProfile;
use super::scenario::{ManipulatorGains, Scenario};
use super::trace::{AgentRow, Trace, TraceRow};
use super::integrate::rk4_step;
use crate::controllers::{control_regressor, sync_vars, trigger_scheme_b, y_times, ControllerState};
use crate::dynamics::{PlantState, RobotModel};
use crate::network::{DelayChannel, TodArbiter};
use crate::observers::{master_observer_accel, slave_observer_accel, ObserverState};
use crate::stability::Scheme;
use crate::{Error, JointMatrix, JointVector, Result};

#[derive(Debug, Clone)]
pub struct Agent {
    pub model: RobotModel,
    pub gains: ManipulatorGains,
    pub plant: PlantState,
    pub obs: ObserverState,
    pub ctrl: ControllerState,
    /// Last value the event trigger was reset to (x̄).
    pub last_sent: JointVector,
    pub force: ForceProfile,
    pub disturbance: ForceProfile,
    /// Formation offset (zero for the master).
    pub offset: JointVector,
    /// Scheme B, latch mode: fired but lost arbitration.
    pub latched: bool,
    tau: JointVector,
    flags: Flags,
}

#[derive(Debug, Clone, Copy, Default)]
struct Flags {
    control_event: bool,
    comm_fire: bool,
    sent: bool,
}

impl Agent {
    fn new(model: RobotModel, gains: ManipulatorGains, q0: JointVector, offset: JointVector) -> Self {
        let p = model.param_count();
        let ctrl = ControllerState::new(
            gains.initial_estimate(&model),
            gains.adaptation_matrix(p),
            gains.kappa,
            gains.lambda,
            gains.control_trigger,
            gains.comm_trigger,
        );
        Self {
            model,
            gains,
            plant: PlantState::new(q0, JointVector::zeros()),
            obs: ObserverState::at_rest(q0),
            ctrl,
            last_sent: JointVector::zeros(),
            force: ForceProfile::Zero,
            disturbance: ForceProfile::Zero,
            offset,
            latched: false,
            tau: JointVector::zeros(),
            flags: Flags::default(),
        }
    }

    fn external(&self, t: f64, q: &JointVector) -> JointVector {
        self.force.eval(t, &self.model, q) + self.disturbance.eval(t, &self.model, q)
    }

    fn row(&self) -> AgentRow {
        AgentRow {
            q: self.plant.q,
            qd: self.plant.qd,
            x: self.obs.x,
            xd: self.obs.xd,
            tau: self.tau,
            delta: self.obs.x - self.last_sent,
            theta_hat: self.ctrl.theta_hat.iter().copied().collect(),
            control_event: self.flags.control_event,
            comm_fire: self.flags.comm_fire,
            sent: self.flags.sent,
        }
    }
}

/// Live simulation state; owned by a single thread.
#[derive(Debug, Clone)]
pub struct Simulation {
    scenario: Scenario,
    k: u64,
    h_steps: u64,
    /// Index 0 is the master, 1..=N the slaves.
    pub agents: Vec<Agent>,
    pub arbiter: TodArbiter,
    forward: DelayChannel<JointVector>,
    backward: DelayChannel<(usize, JointVector)>,
    /// Master's held copy of each slave's value.
    master_received: Vec<JointVector>,
    /// Slaves' held copy of the master's value.
    slave_master_held: JointVector,
    last_master_tx: Option<u64>,
    last_slave_tx: Option<u64>,
    tod_now: bool,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let init = scenario.initial_state();
        let n = scenario.slave_count();
        let mut agents = Vec::with_capacity(n + 1);
        let mut master = Agent::new(
            scenario.master_model(),
            scenario.master_gains(),
            init.master,
            JointVector::zeros(),
        );
        master.force = scenario.master.force;
        master.disturbance = scenario.master.disturbance;
        agents.push(master);
        for (i, spec) in scenario.slaves.iter().enumerate() {
            let mut a = Agent::new(
                scenario.slave_model(i),
                scenario.slave_gains(i),
                init.slaves[i],
                JointVector::new(spec.offset[0], spec.offset[1]),
            );
            a.force = spec.force;
            a.disturbance = spec.disturbance;
            agents.push(a);
        }
        let weights = vec![JointMatrix::identity() * scenario.network.weight; n];
        let h_steps = (scenario.network.h / scenario.dt).round().max(1.0) as u64;
        Ok(Self {
            arbiter: TodArbiter::with_weights(weights, scenario.network.arbitration),
            forward: DelayChannel::new(scenario.network.forward),
            backward: DelayChannel::new(scenario.network.backward),
            master_received: vec![JointVector::zeros(); n],
            slave_master_held: JointVector::zeros(),
            last_master_tx: None,
            last_slave_tx: None,
            tod_now: false,
            agents,
            k: 0,
            h_steps,
            scenario,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn time(&self) -> f64 {
        self.k as f64 * self.scenario.dt
    }

    pub fn step_index(&self) -> u64 {
        self.k
    }

    pub fn slave_count(&self) -> usize {
        self.agents.len() - 1
    }

    pub fn transmissions(&self) -> (usize, usize) {
        (self.forward.sent_count, self.backward.sent_count)
    }

    /// Replaces the master's operator force (used for interactive steering).
    pub fn set_master_force(&mut self, force: ForceProfile) {
        self.agents[0].force = force;
    }

    /// Replaces both channel delay profiles; takes effect for messages sent
    /// from now on, without reordering messages already in flight.
    pub fn set_delays(&mut self, forward: crate::network::DelayProfile, backward: crate::network::DelayProfile) -> Result<()> {
        forward.validate()?;
        backward.validate()?;
        self.forward.set_profile(forward);
        self.backward.set_profile(backward);
        self.scenario.network.forward = forward;
        self.scenario.network.backward = backward;
        Ok(())
    }

    /// Replaces one manipulator's gains (0 = master).
    pub fn set_gains(&mut self, agent: usize, gains: ManipulatorGains) {
        let a = &mut self.agents[agent];
        a.gains = gains;
        a.ctrl.kappa = gains.kappa;
        a.ctrl.lambda = gains.lambda;
        a.ctrl.control_trigger = gains.control_trigger;
        a.ctrl.comm_trigger = gains.comm_trigger;
        let p = a.model.param_count();
        a.ctrl.gamma_adapt = gains.adaptation_matrix(p);
        if agent == 0 {
            self.scenario.master.gains = Some(gains);
        } else {
            self.scenario.slaves[agent - 1].gains = Some(gains);
        }
    }

    fn slave_values(&self) -> Vec<JointVector> {
        self.agents[1..].iter().map(|a| a.obs.x).collect()
    }

    fn deliver(&mut self, t: f64) {
        for m in self.forward.deliver(t) {
            self.slave_master_held = m.payload;
        }
        for m in self.backward.deliver(t) {
            let (i, v) = m.payload;
            self.master_received[i] = v;
        }
    }

    fn arbitrate(&mut self, t: f64) -> Result<usize> {
        let current = self.slave_values();
        let grant = self.arbiter.transmit(&current);
        self.backward.send((grant.index, current[grant.index]), t)?;
        self.last_slave_tx = Some(self.k);
        self.tod_now = true;
        let winner = &mut self.agents[grant.index + 1];
        winner.flags.sent = true;
        winner.last_sent = winner.obs.x;
        winner.latched = false;
        Ok(grant.index)
    }

    fn send_master(&mut self, t: f64) -> Result<()> {
        let m = &mut self.agents[0];
        self.forward.send(m.obs.x, t)?;
        m.flags.sent = true;
        m.last_sent = m.obs.x;
        self.last_master_tx = Some(self.k);
        Ok(())
    }

    fn silent_for(&self, last: Option<u64>) -> bool {
        last.is_none_or(|s| self.k - s >= self.h_steps)
    }

    fn network_events(&mut self, t: f64) -> Result<()> {
        match self.scenario.scheme {
            Scheme::A => {
                if self.k.is_multiple_of(self.h_steps) {
                    self.send_master(t)?;
                    self.arbitrate(t)?;
                }
            }
            Scheme::B => {
                let p_m = self.scenario.network.forward.rate_bound();
                let p_s = self.scenario.network.backward.rate_bound();
                let m = &self.agents[0];
                let fire = trigger_scheme_b(&m.ctrl.comm_trigger, m.gains.beta, &m.obs, &m.last_sent, t, p_m).fire;
                self.agents[0].flags.comm_fire = fire && self.k > 0;
                if fire || self.silent_for(self.last_master_tx) {
                    self.send_master(t)?;
                }
                let mut fired = Vec::new();
                for (i, a) in self.agents[1..].iter_mut().enumerate() {
                    let f = trigger_scheme_b(&a.ctrl.comm_trigger, a.gains.beta, &a.obs, &a.last_sent, t, p_s).fire;
                    if f && self.k > 0 {
                        a.flags.comm_fire = true;
                    }
                    if f || a.latched {
                        fired.push(i);
                    }
                }
                if !fired.is_empty() || self.silent_for(self.last_slave_tx) {
                    let winner = self.arbitrate(t)?;
                    let latch = self.scenario.network.latch_lost_triggers;
                    for i in fired.into_iter().filter(|i| *i != winner) {
                        let a = &mut self.agents[i + 1];
                        if latch {
                            a.latched = true;
                        } else {
                            // Try once, discard: the sample is dropped and the
                            // trigger re-armed from the current value.
                            a.last_sent = a.obs.x;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn control(&mut self, t: f64) {
        let scheme = self.scenario.scheme;
        let first = self.k == 0;
        for a in &mut self.agents {
            let sync = sync_vars(a.ctrl.lambda, &a.plant, &a.obs);
            let y = control_regressor(&a.model, a.ctrl.lambda, &a.plant, &sync);
            match scheme {
                Scheme::A => {
                    if first {
                        a.ctrl.capture(y_times(&y, &a.ctrl.theta_hat), sync.r, t);
                        a.flags.control_event = true;
                    } else {
                        a.flags.control_event = a.ctrl.trigger_scheme_a(&y, &sync, t).fire;
                    }
                    a.tau = a.ctrl.torque_scheme_a();
                }
                Scheme::B => a.tau = a.ctrl.torque_scheme_b(&sync, &y),
            }
        }
    }

    fn adapt(&mut self) {
        let dt = self.scenario.dt;
        for a in &mut self.agents {
            let sync = sync_vars(a.ctrl.lambda, &a.plant, &a.obs);
            let y = control_regressor(&a.model, a.ctrl.lambda, &a.plant, &sync);
            a.ctrl.adapt_step(&y, &sync.r, dt);
        }
    }

    fn integrate(&mut self, t: f64) -> Result<()> {
        let dt = self.scenario.dt;
        let n = self.agents.len();
        let mut y = vec![0.0; 8 * n];
        for (j, a) in self.agents.iter().enumerate() {
            let s = &mut y[8 * j..8 * j + 8];
            s[0..2].copy_from_slice(a.plant.q.as_slice());
            s[2..4].copy_from_slice(a.plant.qd.as_slice());
            s[4..6].copy_from_slice(a.obs.x.as_slice());
            s[6..8].copy_from_slice(a.obs.xd.as_slice());
        }
        let scheme = self.scenario.scheme;
        let received = self.master_received.clone();
        let master_held = self.slave_master_held;
        let agents = &self.agents;
        let mut failure: Option<Error> = None;
        rk4_step(&mut y, t, dt, |ts, s, d| {
            for (j, a) in agents.iter().enumerate() {
                let b = 8 * j;
                let v = |o: usize| JointVector::new(s[b + o], s[b + o + 1]);
                let plant = PlantState::new(v(0), v(2));
                let obs = ObserverState::new(v(4), v(6));
                let tau = match scheme {
                    Scheme::A => a.tau,
                    Scheme::B => {
                        let sync = sync_vars(a.ctrl.lambda, &plant, &obs);
                        let yr = control_regressor(&a.model, a.ctrl.lambda, &plant, &sync);
                        a.ctrl.torque_scheme_b(&sync, &yr)
                    }
                };
                let f = a.external(ts, &plant.q);
                let qdd = match a.model.forward_dynamics(&plant, &tau, &f) {
                    Ok(v) => v,
                    Err(e) => {
                        failure.get_or_insert(e);
                        JointVector::repeat(f64::NAN)
                    }
                };
                let obs_gains = a.gains.observer();
                let xdd = if j == 0 {
                    master_observer_accel(&obs_gains, &obs, &plant.q, &received)
                } else {
                    slave_observer_accel(&obs_gains, &obs, &plant.q, &a.offset, &master_held)
                };
                d[b..b + 2].copy_from_slice(plant.qd.as_slice());
                d[b + 2..b + 4].copy_from_slice(qdd.as_slice());
                d[b + 4..b + 6].copy_from_slice(obs.xd.as_slice());
                d[b + 6..b + 8].copy_from_slice(xdd.as_slice());
            }
        });
        let t_next = t + dt;
        if let Some(Error::NonFinite { variable, .. }) = failure {
            return Err(Error::NonFinite { t: t_next, variable });
        }
        for (j, a) in self.agents.iter_mut().enumerate() {
            let s = &y[8 * j..8 * j + 8];
            if let Some(bad) = s.iter().position(|v| !v.is_finite()) {
                let names = ["q1", "q2", "qd1", "qd2", "x1", "x2", "xd1", "xd2"];
                let who = if j == 0 { "m".to_string() } else { format!("s{j}") };
                return Err(Error::NonFinite {
                    t: t_next,
                    variable: format!("{who}_{}", names[bad]),
                });
            }
            a.plant = PlantState::new(JointVector::new(s[0], s[1]), JointVector::new(s[2], s[3]));
            a.obs = ObserverState::new(JointVector::new(s[4], s[5]), JointVector::new(s[6], s[7]));
            if a.ctrl.theta_hat.iter().any(|v| !v.is_finite()) {
                let who = if j == 0 { "m".to_string() } else { format!("s{j}") };
                return Err(Error::NonFinite {
                    t: t_next,
                    variable: format!("{who}_theta_hat"),
                });
            }
        }
        Ok(())
    }

    /// Runs the events at the current instant and returns its trace row,
    /// without advancing time.
    pub fn events(&mut self) -> Result<TraceRow> {
        let t = self.time();
        for a in &mut self.agents {
            a.flags = Flags::default();
        }
        self.tod_now = false;
        self.deliver(t);
        self.network_events(t)?;
        self.control(t);
        Ok(TraceRow {
            t,
            master: self.agents[0].row(),
            slaves: self.agents[1..].iter().map(Agent::row).collect(),
            tod: self.tod_now,
            granted: self.arbiter.i_star,
            eta: self.arbiter.eta.clone(),
        })
    }

    /// Adaptation plus one RK4 step; call after [`Simulation::events`].
    pub fn advance(&mut self) -> Result<()> {
        let t = self.time();
        self.adapt();
        self.integrate(t)?;
        self.k += 1;
        Ok(())
    }

    /// `events` then `advance`.
    pub fn step(&mut self) -> Result<TraceRow> {
        let row = self.events()?;
        self.advance()?;
        Ok(row)
    }
}

/// Runs a scenario to completion. A zero duration gives an empty trace.
pub fn run_scenario(scenario: &Scenario) -> Result<Trace> {
    let mut sim = Simulation::new(scenario.clone())?;
    let steps = scenario.steps();
    if steps == 0 {
        return Ok(Trace::default());
    }
    let mut rows = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let row = sim.events()?;
        rows.push(row);
        if k < steps {
            sim.advance()?;
        }
    }
    Ok(Trace { rows })
}

/// Adaptation matrix inverse for Lyapunov evaluation.
pub fn adaptation_inverse(gains: &ManipulatorGains, p: usize) -> DMatrix<f64> {
    DMatrix::identity(p, p) / gains.adapt_gain
}
