//! Virtual reference systems.
//!
//! Each manipulator runs a second-order virtual system whose output `x`
//! stands in for remote state. The master system is pulled toward the mean
//! of the slave values it has received; each slave system is pulled toward
//! the received master output shifted by its formation offset. Only `ẍ`
//! depends on the held network signals, so `x` and `ẋ` stay continuous
//! across transmission and trigger instants.

use serde::{Deserialize, Serialize};

use crate::JointVector;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObserverState {
    pub x: JointVector,
    pub xd: JointVector,
}

impl ObserverState {
    pub fn new(x: JointVector, xd: JointVector) -> Self {
        Self { x, xd }
    }

    /// Initialized on the plant: x(0) = q(0), ẋ(0) = 0.
    pub fn at_rest(q: JointVector) -> Self {
        Self {
            x: q,
            xd: JointVector::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverGains {
    /// Damping α.
    pub alpha: f64,
    /// Coupling β.
    pub beta: f64,
    /// Position correction κ, shared with the controller feedback gain.
    pub kappa: f64,
}

impl Default for ObserverGains {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 4.0,
            kappa: 20.0,
        }
    }
}

impl ObserverGains {
    pub fn is_valid(&self) -> bool {
        [self.alpha, self.beta, self.kappa]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite())
    }
}

/// `ẍ_m = −α ẋ_m − κ (x_m − q_m) − β (x_m − mean(received))`.
///
/// `received` holds the zero-order-held values last delivered from each slave.
pub fn master_observer_accel(
    gains: &ObserverGains,
    obs: &ObserverState,
    q_m: &JointVector,
    received: &[JointVector],
) -> JointVector {
    let n = received.len().max(1) as f64;
    let mean = received.iter().fold(JointVector::zeros(), |acc, v| acc + v) / n;
    -gains.alpha * obs.xd - gains.kappa * (obs.x - q_m) - gains.beta * (obs.x - mean)
}

/// `ẍ_si = −α ẋ_si − κ (x_si − q_si) − β ((x_si − γ_i) − x̄_m)`.
pub fn slave_observer_accel(
    gains: &ObserverGains,
    obs: &ObserverState,
    q_s: &JointVector,
    offset: &JointVector,
    master_held: &JointVector,
) -> JointVector {
    let x_check = obs.x - offset;
    -gains.alpha * obs.xd - gains.kappa * (obs.x - q_s) - gains.beta * (x_check - master_held)
}
