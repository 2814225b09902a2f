//! External joint torques: operator and environment forces.

use serde::{Deserialize, Serialize};

use crate::dynamics::RobotModel;
use crate::{Error, JointVector, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForceProfile {
    #[default]
    Zero,
    /// `A e^{−a t} sin(ω t)` on every joint.
    DecayingSine { amplitude: f64, decay: f64, omega: f64 },
    /// Pulses of width `width` every `period` seconds, the k-th with height
    /// `amplitude · ratio^k`.
    PulseTrainDecaying {
        amplitude: f64,
        period: f64,
        width: f64,
        ratio: f64,
    },
    /// `Jᵀ(q) K (target − p(q))` pulling the end effector toward a point.
    SpringToTarget { stiffness: f64, target: [f64; 2] },
}

impl ForceProfile {
    /// Builds a profile from a kind name and its numeric parameters, in the
    /// field order of the variant.
    pub fn from_kind(kind: &str, params: &[f64]) -> Result<Self> {
        let need = |n: usize| -> Result<()> {
            if params.len() == n {
                Ok(())
            } else {
                Err(Error::InvalidScenario(format!(
                    "force kind {kind} takes {n} parameters, got {}",
                    params.len()
                )))
            }
        };
        let p = match kind {
            "zero" => {
                need(0)?;
                Self::Zero
            }
            "decaying_sine" => {
                need(3)?;
                Self::DecayingSine {
                    amplitude: params[0],
                    decay: params[1],
                    omega: params[2],
                }
            }
            "pulse_train_decaying" => {
                need(4)?;
                Self::PulseTrainDecaying {
                    amplitude: params[0],
                    period: params[1],
                    width: params[2],
                    ratio: params[3],
                }
            }
            "spring_to_target" => {
                need(3)?;
                Self::SpringToTarget {
                    stiffness: params[0],
                    target: [params[1], params[2]],
                }
            }
            other => return Err(Error::UnknownForceKind(other.to_string())),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Zero => true,
            Self::DecayingSine { amplitude, decay, omega } => {
                amplitude.is_finite() && decay > 0.0 && omega.is_finite()
            }
            Self::PulseTrainDecaying {
                amplitude,
                period,
                width,
                ratio,
            } => amplitude.is_finite() && period > 0.0 && width > 0.0 && width <= period && (0.0..1.0).contains(&ratio),
            Self::SpringToTarget { stiffness, target } => {
                stiffness >= 0.0 && target.iter().all(|v| v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidScenario(format!("invalid force profile {self:?}")))
        }
    }

    pub fn eval(&self, t: f64, model: &RobotModel, q: &JointVector) -> JointVector {
        match *self {
            Self::Zero => JointVector::zeros(),
            Self::DecayingSine { amplitude, decay, omega } => {
                let v = amplitude * (-decay * t).exp() * (omega * t).sin();
                JointVector::new(v, v)
            }
            Self::PulseTrainDecaying {
                amplitude,
                period,
                width,
                ratio,
            } => {
                if t < 0.0 {
                    return JointVector::zeros();
                }
                let k = (t / period).floor();
                if t - k * period < width {
                    let v = amplitude * ratio.powf(k);
                    JointVector::new(v, v)
                } else {
                    JointVector::zeros()
                }
            }
            Self::SpringToTarget { stiffness, target } => {
                let p = model.forward_kinematics(q);
                let pull = stiffness * (JointVector::new(target[0], target[1]) - p);
                model.jacobian(q).transpose() * pull
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> RobotModel {
        RobotModel::default()
    }

    #[test]
    fn zero_everywhere() {
        for t in [0.0, 1.0, 1e6] {
            assert_eq!(ForceProfile::Zero.eval(t, &model(), &JointVector::new(0.3, 0.1)), JointVector::zeros());
        }
    }

    #[test]
    fn decaying_sine_starts_at_zero() {
        let f = ForceProfile::DecayingSine {
            amplitude: 1.0,
            decay: 0.5,
            omega: 2.0,
        };
        assert_eq!(f.eval(0.0, &model(), &JointVector::zeros()), JointVector::zeros());
    }

    /// `∫₀^∞ A² e^{−2at} sin²(ωt) dt = A² ω² / (4a(a² + ω²))` per joint.
    #[test]
    fn decaying_sine_energy_closed_form() {
        let (a_amp, a, w) = (2.0, 0.3, 3.0);
        let f = ForceProfile::DecayingSine {
            amplitude: a_amp,
            decay: a,
            omega: w,
        };
        let exact = 2.0 * a_amp * a_amp * w * w / (4.0 * a * (a * a + w * w));
        let dt = 1e-3;
        let mut acc = 0.0;
        let m = model();
        for k in 0..80_000 {
            let t = k as f64 * dt;
            let g = |t: f64| f.eval(t, &m, &JointVector::zeros()).norm_squared();
            acc += 0.5 * dt * (g(t) + g(t + dt));
        }
        assert!((acc - exact).abs() / exact < 0.01, "{acc} vs {exact}");
    }

    #[test]
    fn pulse_train_geometric() {
        let f = ForceProfile::PulseTrainDecaying {
            amplitude: 2.0,
            period: 1.0,
            width: 0.25,
            ratio: 0.5,
        };
        let m = model();
        let q = JointVector::zeros();
        assert_eq!(f.eval(0.1, &m, &q)[0], 2.0);
        assert_eq!(f.eval(0.5, &m, &q)[0], 0.0);
        assert_eq!(f.eval(2.1, &m, &q)[0], 0.5);
    }

    #[test]
    fn spring_at_target_is_zero() {
        let m = model();
        let q = JointVector::new(0.4, -0.7);
        let p = m.forward_kinematics(&q);
        let f = ForceProfile::SpringToTarget {
            stiffness: 50.0,
            target: [p[0], p[1]],
        };
        assert!(f.eval(0.0, &m, &q).norm() < 1e-12);
    }

    #[test]
    fn spring_does_positive_work_toward_target() {
        let m = model();
        let q = JointVector::new(0.4, 0.9);
        let f = ForceProfile::SpringToTarget {
            stiffness: 10.0,
            target: [0.5, 1.5],
        };
        let tau = f.eval(0.0, &m, &q);
        // A small joint step along τ reduces the distance to the target.
        let q2 = q + 1e-4 * tau;
        let d = |q: &JointVector| (m.forward_kinematics(q) - JointVector::new(0.5, 1.5)).norm();
        assert!(d(&q2) < d(&q));
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!(matches!(
            ForceProfile::from_kind("sawtooth", &[]),
            Err(Error::UnknownForceKind(_))
        ));
        assert!(ForceProfile::from_kind("decaying_sine", &[2.0, 0.3, 1.0]).is_ok());
    }

    #[test]
    fn parses_from_toml() {
        #[derive(Deserialize)]
        struct W {
            f: ForceProfile,
        }
        let w: W = toml::from_str("f = { kind = \"decaying_sine\", amplitude = 2.0, decay = 0.3, omega = 1.0 }").unwrap();
        assert!(matches!(w.f, ForceProfile::DecayingSine { .. }));
        assert!(toml::from_str::<W>("f = { kind = \"bogus\" }").is_err());
    }
}
