//! Scenario description, loaded from TOML.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::force::ForceProfile;
use crate::controllers::{CommTrigger, ControlTrigger};
use crate::dynamics::RobotModel;
use crate::network::{Arbitration, DelayProfile};
use crate::observers::ObserverGains;
use crate::stability::{AgentGains, Scheme, StabilityProblem};
use crate::{Error, JointVector, Result};

/// Observer, controller and trigger settings of one manipulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManipulatorGains {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub lambda: f64,
    /// Adaptation gain: Γ = adapt_gain · I.
    pub adapt_gain: f64,
    /// Initial estimate θ̂(0) = theta_hat_scale · θ.
    pub theta_hat_scale: f64,
    pub control_trigger: ControlTrigger,
    pub comm_trigger: CommTrigger,
}

impl Default for ManipulatorGains {
    fn default() -> Self {
        let obs = ObserverGains::default();
        Self {
            alpha: obs.alpha,
            beta: obs.beta,
            kappa: obs.kappa,
            lambda: 2.0,
            adapt_gain: 0.5,
            theta_hat_scale: 0.5,
            control_trigger: ControlTrigger::default(),
            comm_trigger: CommTrigger::default(),
        }
    }
}

impl ManipulatorGains {
    pub fn observer(&self) -> ObserverGains {
        ObserverGains {
            alpha: self.alpha,
            beta: self.beta,
            kappa: self.kappa,
        }
    }

    pub fn adaptation_matrix(&self, p: usize) -> DMatrix<f64> {
        DMatrix::identity(p, p) * self.adapt_gain
    }

    pub fn initial_estimate(&self, model: &RobotModel) -> DVector<f64> {
        model.theta() * self.theta_hat_scale
    }

    pub fn stability_gains(&self) -> AgentGains {
        AgentGains {
            alpha: self.alpha,
            beta: self.beta,
            kappa: self.kappa,
            lambda: self.lambda,
            gamma: self.control_trigger.gamma,
            c: self.comm_trigger.c,
        }
    }

    fn validate(&self, who: &str, scheme: Scheme) -> Result<()> {
        let vals = [self.alpha, self.beta, self.kappa, self.lambda, self.adapt_gain];
        if vals.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidScenario(format!(
                "{who}: alpha, beta, kappa, lambda, adapt_gain must be positive"
            )));
        }
        if !self.theta_hat_scale.is_finite() {
            return Err(Error::InvalidScenario(format!("{who}: theta_hat_scale must be finite")));
        }
        let ct = &self.control_trigger;
        let cm = &self.comm_trigger;
        if scheme == Scheme::A && !(ct.gamma > 0.0 && ct.epsilon >= 0.0 && ct.nu >= 0.0) {
            return Err(Error::InvalidScenario(format!("{who}: invalid control trigger")));
        }
        if scheme == Scheme::B && !(cm.c >= 0.0 && cm.epsilon >= 0.0 && cm.nu >= 0.0) {
            return Err(Error::InvalidScenario(format!("{who}: invalid communication trigger")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MasterSpec {
    /// Initial joint angles; drawn around the formation centre when absent.
    #[serde(default)]
    pub q0: Option<[f64; 2]>,
    #[serde(default)]
    pub gains: Option<ManipulatorGains>,
    #[serde(default)]
    pub model: Option<RobotModel>,
    #[serde(default)]
    pub force: ForceProfile,
    #[serde(default)]
    pub disturbance: ForceProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SlaveSpec {
    /// Formation offset γ_i (joint space).
    pub offset: [f64; 2],
    #[serde(default)]
    pub q0: Option<[f64; 2]>,
    #[serde(default)]
    pub gains: Option<ManipulatorGains>,
    #[serde(default)]
    pub model: Option<RobotModel>,
    #[serde(default)]
    pub force: ForceProfile,
    #[serde(default)]
    pub disturbance: ForceProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Sampling period (scheme A) or maximum silence interval (scheme B).
    pub h: f64,
    /// Master → slaves.
    pub forward: DelayProfile,
    /// Slaves → master.
    pub backward: DelayProfile,
    #[serde(default = "default_arbitration")]
    pub arbitration: Arbitration,
    /// Scalar TOD weight: Q_i = weight · I.
    #[serde(default = "one")]
    pub weight: f64,
    /// Scheme B: a slave whose trigger fired but lost arbitration keeps its
    /// trigger armed instead of discarding the sample.
    #[serde(default)]
    pub latch_lost_triggers: bool,
}

fn default_arbitration() -> Arbitration {
    Arbitration::Tod
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConditions {
    /// Formation centre for the master.
    pub center: [f64; 2],
    /// Half-width of the uniform draw around the formation.
    pub spread: f64,
}

impl Default for InitialConditions {
    fn default() -> Self {
        Self {
            center: [0.0, 0.0],
            spread: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub scheme: Scheme,
    pub duration: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    /// Model shared by every manipulator unless overridden.
    #[serde(default)]
    pub model: RobotModel,
    /// Gains shared by every manipulator unless overridden.
    #[serde(default)]
    pub gains: ManipulatorGains,
    #[serde(default)]
    pub initial: InitialConditions,
    pub network: NetworkConfig,
    #[serde(default)]
    pub master: MasterSpec,
    pub slaves: Vec<SlaveSpec>,
    /// Bound on every |q|, |q̇|, |x|, |ẋ| for the boundedness check.
    #[serde(default)]
    pub envelope: Option<f64>,
}

fn default_dt() -> f64 {
    1e-3
}

/// Concrete initial state after the random draw.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub master: JointVector,
    pub slaves: Vec<JointVector>,
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let sc: Self = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn slave_count(&self) -> usize {
        self.slaves.len()
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn master_gains(&self) -> ManipulatorGains {
        self.master.gains.unwrap_or(self.gains)
    }

    pub fn slave_gains(&self, i: usize) -> ManipulatorGains {
        self.slaves[i].gains.unwrap_or(self.gains)
    }

    pub fn master_model(&self) -> RobotModel {
        self.master.model.unwrap_or(self.model)
    }

    pub fn slave_model(&self, i: usize) -> RobotModel {
        self.slaves[i].model.unwrap_or(self.model)
    }

    pub fn offsets(&self) -> Vec<JointVector> {
        self.slaves
            .iter()
            .map(|s| JointVector::new(s.offset[0], s.offset[1]))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be non-negative, got {}", self.duration));
        }
        if self.slaves.is_empty() {
            return Err(Error::TooFewSlaves(0));
        }
        if !(self.network.h > 0.0 && self.network.h.is_finite()) {
            return bad(format!("network.h must be positive, got {}", self.network.h));
        }
        let ratio = self.network.h / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return bad(format!("network.h = {} must be a multiple of dt = {}", self.network.h, self.dt));
        }
        if !(self.network.weight > 0.0) {
            return bad("network.weight must be positive".into());
        }
        self.network.forward.validate()?;
        self.network.backward.validate()?;
        let sum = self.offsets().iter().fold(JointVector::zeros(), |a, b| a + b);
        if sum.norm() > 1e-9 {
            return bad(format!("formation offsets must sum to zero, got {:?}", sum.as_slice()));
        }
        if !(self.initial.spread >= 0.0) {
            return bad("initial.spread must be non-negative".into());
        }
        self.master_model().validate()?;
        self.master_gains().validate("master", self.scheme)?;
        self.master.force.validate()?;
        self.master.disturbance.validate()?;
        for (i, s) in self.slaves.iter().enumerate() {
            self.slave_model(i).validate()?;
            self.slave_gains(i).validate(&format!("slave {}", i + 1), self.scheme)?;
            s.force.validate()?;
            s.disturbance.validate()?;
        }
        if let Some(e) = self.envelope {
            if !(e > 0.0) {
                return bad("envelope must be positive".into());
            }
        }
        Ok(())
    }

    /// Initial joint angles: explicit `q0` where given, otherwise a seeded
    /// uniform draw within `±spread` of the formation.
    pub fn initial_state(&self) -> InitialState {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let c = JointVector::new(self.initial.center[0], self.initial.center[1]);
        let spread = self.initial.spread;
        let mut draw = |base: JointVector| {
            if spread > 0.0 {
                base + JointVector::new(rng.random_range(-spread..=spread), rng.random_range(-spread..=spread))
            } else {
                base
            }
        };
        let master = match self.master.q0 {
            Some(q) => JointVector::new(q[0], q[1]),
            None => draw(c),
        };
        let slaves = self
            .slaves
            .iter()
            .map(|s| match s.q0 {
                Some(q) => JointVector::new(q[0], q[1]),
                None => draw(c + JointVector::new(s.offset[0], s.offset[1])),
            })
            .collect();
        InitialState { master, slaves }
    }

    /// Certificate data implied by the scenario.
    pub fn stability_problem(&self) -> StabilityProblem {
        StabilityProblem {
            scheme: self.scheme,
            n: 2,
            master: self.master_gains().stability_gains(),
            slaves: (0..self.slave_count()).map(|i| self.slave_gains(i).stability_gains()).collect(),
            h: self.network.h,
            d_m: self.network.forward.max,
            d_s: self.network.backward.max,
            p_m: self.network.forward.rate_bound(),
            p_s: self.network.backward.rate_bound(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
scheme = "A"
duration = 1.0

[network]
h = 0.02
forward = { max = 0.05, amplitude = 0.5, omega = 10.0 }
backward = { max = 0.05 }

[[slaves]]
offset = [0.5, 0.0]

[[slaves]]
offset = [-0.5, 0.0]
"#;

    #[test]
    fn parses_minimal() {
        let sc = Scenario::from_toml_str(MINIMAL).unwrap();
        assert_eq!(sc.slave_count(), 2);
        assert_eq!(sc.dt, 1e-3);
        assert_eq!(sc.steps(), 1000);
        assert_eq!(sc.network.arbitration, Arbitration::Tod);
        let p = sc.stability_problem();
        assert_eq!(p.p_m, 0.125);
        assert_eq!(p.p_s, 0.0);
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = format!("{MINIMAL}\nbogus = 1\n");
        assert!(matches!(Scenario::from_toml_str(&text), Err(Error::Parse(_))));
        let text = MINIMAL.replace("h = 0.02", "h = 0.02\nperiod = 3");
        assert!(Scenario::from_toml_str(&text).is_err());
    }

    #[test]
    fn rejects_unbalanced_formation() {
        let text = MINIMAL.replace("offset = [-0.5, 0.0]", "offset = [-0.4, 0.0]");
        assert!(matches!(Scenario::from_toml_str(&text), Err(Error::InvalidScenario(_))));
    }

    #[test]
    fn rejects_bad_steps() {
        assert!(Scenario::from_toml_str(&MINIMAL.replace("h = 0.02", "h = 0.0")).is_err());
        assert!(Scenario::from_toml_str(&MINIMAL.replace("h = 0.02", "h = 0.0205")).is_err());
        assert!(Scenario::from_toml_str(&MINIMAL.replace("duration = 1.0", "duration = 1.0\ndt = -1.0")).is_err());
        let fast = MINIMAL.replace("omega = 10.0", "omega = 100.0");
        assert!(Scenario::from_toml_str(&fast).is_err());
    }

    #[test]
    fn initial_draw_is_seeded_and_within_spread() {
        let sc = Scenario::from_toml_str(MINIMAL).unwrap();
        let a = sc.initial_state();
        assert_eq!(a, sc.initial_state());
        for (q, s) in a.slaves.iter().zip(&sc.slaves) {
            assert!((q - JointVector::new(s.offset[0], s.offset[1])).amax() <= 0.5);
        }
        let mut other = sc.clone();
        other.seed = 1;
        assert_ne!(a, other.initial_state());
    }

    #[test]
    fn round_trips_through_toml() {
        let sc = Scenario::from_toml_str(MINIMAL).unwrap();
        let back = Scenario::from_toml_str(&sc.to_toml_string()).unwrap();
        assert_eq!(sc, back);
    }
}
