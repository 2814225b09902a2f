//! Adaptive control laws and the two event-trigger rules.
//!
//! Scheme A holds `τ = −κ r(t_k) − Y(t_k) θ̂(t_k)` between control events
//! and re-triggers when
//!
//! ```text
//! |ρ| + κ |ε| − (γ/2) |r| − ε₀ e^{−ν t} ≥ 0,    ρ = Yθ̂ − (Yθ̂)(t_k),  ε = r − r(t_k)
//! ```
//!
//! Scheme B evaluates `τ = −κ r − Y θ̂` continuously and instead triggers
//! communication when
//!
//! ```text
//! |x − x̄|² − (2c(1 − p)/β) |ẋ|² − ε′ e^{−ν′ t} ≥ 0.
//! ```
//!
//! Adaptation `θ̂̇ = Γ Yᵀ r` runs continuously in both schemes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{PlantState, RobotModel};
use crate::observers::ObserverState;
use crate::{Error, JointVector, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncVariables {
    /// e = q − x
    pub e: JointVector,
    /// ė = q̇ − ẋ
    pub ed: JointVector,
    /// r = q̇ + λ e
    pub r: JointVector,
}

pub fn sync_vars(lambda: f64, plant: &PlantState, obs: &ObserverState) -> SyncVariables {
    let e = plant.q - obs.x;
    SyncVariables {
        e,
        ed: plant.qd - obs.xd,
        r: plant.qd + lambda * e,
    }
}

/// Regressor with `Y θ = λ M ė + λ C e − G`.
pub fn control_regressor(
    model: &RobotModel,
    lambda: f64,
    plant: &PlantState,
    sync: &SyncVariables,
) -> DMatrix<f64> {
    model.regressor(&plant.q, &plant.qd, &(lambda * sync.ed), &(lambda * sync.e))
}

/// Scheme-A trigger constants (γ, ε, ν).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlTrigger {
    pub gamma: f64,
    pub epsilon: f64,
    pub nu: f64,
}

impl Default for ControlTrigger {
    fn default() -> Self {
        Self {
            gamma: 10.0,
            epsilon: 0.05,
            nu: 0.5,
        }
    }
}

/// Scheme-B trigger constants (c, ε′, ν′).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommTrigger {
    pub c: f64,
    pub epsilon: f64,
    pub nu: f64,
}

impl Default for CommTrigger {
    fn default() -> Self {
        Self {
            c: 2.0,
            epsilon: 1e-4,
            nu: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerDecision {
    /// Trigger function value; fires iff ≥ 0.
    pub value: f64,
    pub fire: bool,
}

impl TriggerDecision {
    fn from_value(value: f64) -> Self {
        Self {
            value,
            fire: value >= 0.0,
        }
    }
}

/// Per-manipulator adaptive controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub theta_hat: DVector<f64>,
    pub gamma_adapt: DMatrix<f64>,
    pub kappa: f64,
    pub lambda: f64,
    pub control_trigger: ControlTrigger,
    pub comm_trigger: CommTrigger,
    pub held_r: JointVector,
    pub held_y_theta: JointVector,
    /// Scheme-A control update instants.
    pub events: Vec<f64>,
}

impl ControllerState {
    pub fn new(
        theta_hat: DVector<f64>,
        gamma_adapt: DMatrix<f64>,
        kappa: f64,
        lambda: f64,
        control_trigger: ControlTrigger,
        comm_trigger: CommTrigger,
    ) -> Self {
        Self {
            theta_hat,
            gamma_adapt,
            kappa,
            lambda,
            control_trigger,
            comm_trigger,
            held_r: JointVector::zeros(),
            held_y_theta: JointVector::zeros(),
            events: Vec::new(),
        }
    }

    /// Held torque of scheme A.
    pub fn torque_scheme_a(&self) -> JointVector {
        -self.kappa * self.held_r - self.held_y_theta
    }

    /// Live torque of scheme B.
    pub fn torque_scheme_b(&self, sync: &SyncVariables, y: &DMatrix<f64>) -> JointVector {
        -self.kappa * sync.r - y_times(y, &self.theta_hat)
    }

    /// Explicit Euler step of `θ̂̇ = Γ Yᵀ r`.
    pub fn adapt_step(&mut self, y: &DMatrix<f64>, r: &JointVector, dt: f64) {
        let r = DVector::from_column_slice(r.as_slice());
        let delta = &self.gamma_adapt * (y.transpose() * r) * dt;
        self.theta_hat += delta;
    }

    /// Evaluates the scheme-A trigger; on fire captures the new held values
    /// and logs `t`.
    pub fn trigger_scheme_a(
        &mut self,
        y: &DMatrix<f64>,
        sync: &SyncVariables,
        t: f64,
    ) -> TriggerDecision {
        let y_theta = y_times(y, &self.theta_hat);
        let value = control_trigger_value(
            &self.control_trigger,
            self.kappa,
            &(y_theta - self.held_y_theta),
            &(sync.r - self.held_r),
            &sync.r,
            t,
        );
        let d = TriggerDecision::from_value(value);
        if d.fire {
            self.capture(y_theta, sync.r, t);
        }
        d
    }

    /// Unconditionally latches the control (used at t = 0, the first event).
    pub fn capture(&mut self, y_theta: JointVector, r: JointVector, t: f64) {
        self.held_y_theta = y_theta;
        self.held_r = r;
        self.events.push(t);
    }
}

/// `Y θ̂` as a joint vector.
pub fn y_times(y: &DMatrix<f64>, theta: &DVector<f64>) -> JointVector {
    let v = y * theta;
    JointVector::new(v[0], v[1])
}

/// `ι = |ρ| + κ|ε| − (γ/2)|r| − ε₀ e^{−νt}`.
pub fn control_trigger_value(
    trig: &ControlTrigger,
    kappa: f64,
    rho: &JointVector,
    r_dev: &JointVector,
    r: &JointVector,
    t: f64,
) -> f64 {
    rho.norm() + kappa * r_dev.norm() - 0.5 * trig.gamma * r.norm() - trig.epsilon * (-trig.nu * t).exp()
}

/// `ι′ = |δ|² − (2c(1−p)/β)|ẋ|² − ε′ e^{−ν′t}` with `δ = x − x̄`.
pub fn trigger_scheme_b(
    trig: &CommTrigger,
    beta: f64,
    obs: &ObserverState,
    last_sent: &JointVector,
    t: f64,
    p_channel: f64,
) -> TriggerDecision {
    let delta = obs.x - last_sent;
    let value = delta.norm_squared()
        - 2.0 * trig.c * (1.0 - p_channel) / beta * obs.xd.norm_squared()
        - trig.epsilon * (-trig.nu * t).exp();
    TriggerDecision::from_value(value)
}

/// Minimum-dwell lower bound `ε e^{−νt} / Q̂`.
pub fn zeno_bound(trig: &ControlTrigger, q_hat: f64, t: f64) -> Result<f64> {
    if !(q_hat > 0.0) {
        return Err(Error::NonPositiveBound(q_hat));
    }
    Ok(trig.epsilon * (-trig.nu * t).exp() / q_hat)
}

/// Scheme-B analogue: `|δ|` must grow to `sqrt(ε′ e^{−ν′t})` at a rate of at
/// most `max |ẋ|`.
pub fn zeno_bound_comm(trig: &CommTrigger, xd_max: f64, t: f64) -> Result<f64> {
    if !(xd_max > 0.0) {
        return Err(Error::NonPositiveBound(xd_max));
    }
    Ok((trig.epsilon * (-trig.nu * t).exp()).sqrt() / xd_max)
}
