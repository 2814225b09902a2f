//! Shared-medium network: TOD arbitration on the slave-to-master channel,
//! time-varying delay channels and zero-order-hold reconstruction.

use serde::{Deserialize, Serialize};

use crate::{Error, JointMatrix, JointVector, Result};

/// Which slave gets the backward channel at a transmission instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Arbitration {
    #[default]
    Tod,
    /// Round-robin baseline.
    Rr,
}

/// Weighted squared norm `ηᵀ Q η`.
pub fn weighted_norm(eta: &JointVector, q: &JointMatrix) -> f64 {
    eta.dot(&(q * eta))
}

/// Index maximizing `ηᵢᵀ Qᵢ ηᵢ`; ties go to the lowest index.
pub fn tod_select(eta: &[JointVector], weights: &[JointMatrix]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, (e, q)) in eta.iter().zip(weights).enumerate() {
        let v = weighted_norm(e, q);
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Round-robin baseline: `counter mod n`.
pub fn rr_select(counter: u64, n: usize) -> usize {
    (counter % n as u64) as usize
}

/// Delayed reset of the transmission errors:
/// `η_i ← (1 − δ(i, i*)) η_i + x_i(s_k) − x_i(s_{k+1})`.
pub fn reset_eta(
    eta: &[JointVector],
    i_star: usize,
    x_prev: &[JointVector],
    x_now: &[JointVector],
) -> Vec<JointVector> {
    eta.iter()
        .zip(x_prev.iter().zip(x_now))
        .enumerate()
        .map(|(i, (e, (xp, xn)))| {
            if i == i_star {
                xp - xn
            } else {
                e + xp - xn
            }
        })
        .collect()
}

/// TOD bookkeeping for the backward channel.
///
/// `eta` holds the transmission errors evaluated at the latest instant
/// (before that instant's commit), maintained through [`reset_eta`].
#[derive(Debug, Clone, PartialEq)]
pub struct TodArbiter {
    pub mode: Arbitration,
    pub weights: Vec<JointMatrix>,
    pub x_hat: Vec<JointVector>,
    pub eta: Vec<JointVector>,
    pub i_star: Option<usize>,
    last_sample: Option<Vec<JointVector>>,
    counter: u64,
}

/// Outcome of one transmission instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Grant {
    pub index: usize,
    pub eta: Vec<JointVector>,
}

impl TodArbiter {
    pub fn new(n: usize, mode: Arbitration) -> Self {
        Self::with_weights(vec![JointMatrix::identity(); n], mode)
    }

    pub fn with_weights(weights: Vec<JointMatrix>, mode: Arbitration) -> Self {
        let n = weights.len();
        Self {
            mode,
            weights,
            x_hat: vec![JointVector::zeros(); n],
            eta: vec![JointVector::zeros(); n],
            i_star: None,
            last_sample: None,
            counter: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Transmission errors at a new instant with slave values `current`.
    pub fn transmission_errors(&self, current: &[JointVector]) -> Vec<JointVector> {
        match (&self.last_sample, self.i_star) {
            (Some(prev), Some(i_star)) => reset_eta(&self.eta, i_star, prev, current),
            // x̂(s₋₁) = 0
            _ => self.x_hat.iter().zip(current).map(|(h, c)| h - c).collect(),
        }
    }

    /// Picks the slave for this instant without mutating state.
    pub fn select(&self, current: &[JointVector]) -> Grant {
        let eta = self.transmission_errors(current);
        let index = match self.mode {
            Arbitration::Tod => tod_select(&eta, &self.weights),
            Arbitration::Rr => rr_select(self.counter, self.len()),
        };
        Grant { index, eta }
    }

    /// Applies a grant: `x̂_{i*} ← x_{i*}`, all others held.
    pub fn commit(&mut self, grant: &Grant, current: &[JointVector]) {
        self.x_hat[grant.index] = current[grant.index];
        self.eta = grant.eta.clone();
        self.i_star = Some(grant.index);
        self.last_sample = Some(current.to_vec());
        self.counter += 1;
    }

    /// `select` followed by `commit`.
    pub fn transmit(&mut self, current: &[JointVector]) -> Grant {
        let g = self.select(current);
        self.commit(&g, current);
        g
    }
}

/// Sinusoidal delay profile `T(t) = d/2 · (1 + a · sin(ω t))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayProfile {
    /// Upper bound d (s).
    pub max: f64,
    /// Relative amplitude a in [0, 1).
    #[serde(default)]
    pub amplitude: f64,
    /// ω (rad/s).
    #[serde(default)]
    pub omega: f64,
}

impl DelayProfile {
    pub fn new(max: f64, amplitude: f64, omega: f64) -> Self {
        Self {
            max,
            amplitude,
            omega,
        }
    }

    /// A profile with `T ≡ value`.
    pub fn constant(value: f64) -> Self {
        Self::new(2.0 * value, 0.0, 0.0)
    }

    pub fn delay(&self, t: f64) -> f64 {
        0.5 * self.max * (1.0 + self.amplitude * (self.omega * t).sin())
    }

    /// Bound p on Ṫ.
    pub fn rate_bound(&self) -> f64 {
        0.5 * self.max * self.amplitude * self.omega
    }

    pub fn min_delay(&self) -> f64 {
        if self.omega == 0.0 {
            self.delay(0.0)
        } else {
            0.5 * self.max * (1.0 - self.amplitude)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max >= 0.0 && self.max.is_finite()) {
            return Err(Error::InvalidScenario(format!("delay bound {} must be ≥ 0", self.max)));
        }
        if !(0.0..1.0).contains(&self.amplitude) || self.omega < 0.0 {
            return Err(Error::InvalidScenario(
                "delay amplitude must lie in [0, 1) and omega ≥ 0".into(),
            ));
        }
        if self.rate_bound() >= 1.0 {
            return Err(Error::InvalidScenario(format!(
                "delay derivative bound p = {} must be < 1",
                self.rate_bound()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message<P> {
    pub payload: P,
    pub sent: f64,
    pub arrival: f64,
}

/// One-directional delayed channel. Messages are delivered in send order.
#[derive(Debug, Clone)]
pub struct DelayChannel<P> {
    pub profile: DelayProfile,
    in_flight: std::collections::VecDeque<Message<P>>,
    last_send: f64,
    last_arrival: f64,
    pub sent_count: usize,
    /// Set after a live profile swap: arrivals are clamped so the queue
    /// stays first-in first-out instead of failing.
    hold_order: bool,
}

impl<P: Clone> DelayChannel<P> {
    pub fn new(profile: DelayProfile) -> Self {
        Self {
            profile,
            in_flight: Default::default(),
            last_send: f64::NEG_INFINITY,
            last_arrival: f64::NEG_INFINITY,
            sent_count: 0,
            hold_order: false,
        }
    }

    /// Swaps the delay profile mid-run. Messages already in flight keep
    /// their arrival times and later ones never overtake them.
    pub fn set_profile(&mut self, profile: DelayProfile) {
        self.profile = profile;
        self.hold_order = true;
    }

    pub fn send(&mut self, payload: P, t_send: f64) -> Result<f64> {
        if t_send < self.last_send {
            return Err(Error::Trace(format!(
                "send at {t_send} precedes previous send at {}",
                self.last_send
            )));
        }
        let mut arrival = t_send + self.profile.delay(t_send);
        if self.hold_order {
            arrival = arrival.max(self.last_arrival);
        }
        if arrival < self.last_arrival {
            return Err(Error::NonMonotoneArrival {
                arrival,
                previous: self.last_arrival,
            });
        }
        self.last_send = t_send;
        self.last_arrival = arrival;
        self.sent_count += 1;
        self.in_flight.push_back(Message {
            payload,
            sent: t_send,
            arrival,
        });
        Ok(arrival)
    }

    /// Pops every message with `arrival ≤ t`.
    pub fn deliver(&mut self, t: f64) -> Vec<Message<P>> {
        let mut out = Vec::new();
        while self.in_flight.front().is_some_and(|m| m.arrival <= t) {
            out.extend(self.in_flight.pop_front());
        }
        out
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }
}

/// Zero-order hold of the latest delivered payload.
#[derive(Debug, Clone, PartialEq)]
pub struct ZohBuffer<P> {
    initial: P,
    arrivals: Vec<(f64, P)>,
}

impl<P: Clone> ZohBuffer<P> {
    pub fn new(initial: P) -> Self {
        Self {
            initial,
            arrivals: Vec::new(),
        }
    }

    pub fn push(&mut self, arrival: f64, payload: P) {
        self.arrivals.push((arrival, payload));
    }

    /// Payload of the latest message with `arrival ≤ t`, or the initial value.
    pub fn read(&self, t: f64) -> P {
        let idx = self.arrivals.partition_point(|(a, _)| *a <= t);
        if idx == 0 {
            self.initial.clone()
        } else {
            self.arrivals[idx - 1].1.clone()
        }
    }

    /// Most recent payload regardless of time.
    pub fn latest(&self) -> P {
        self.arrivals
            .last()
            .map(|(_, p)| p.clone())
            .unwrap_or_else(|| self.initial.clone())
    }

    /// Drops history older than the newest entry at or before `t`.
    pub fn compact(&mut self, t: f64) {
        let idx = self.arrivals.partition_point(|(a, _)| *a <= t);
        if idx > 1 {
            self.arrivals.drain(..idx - 1);
        }
    }
}

/// Bound on the composed sample-and-delay age: `h + d`.
pub fn effective_delay_bound(h: f64, d: f64) -> f64 {
    h + d
}
