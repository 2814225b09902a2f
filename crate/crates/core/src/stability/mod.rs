//! LMI stability certificates and Lyapunov-Krasovskii diagnostics.
//!
//! * [`lmi`] assembles the reset LMI Ω, the scheme-A certificate Ξ and the
//!   scheme-B certificate Π and checks negative definiteness.
//! * [`search`] looks for scalar-isotropic decision variables that make
//!   every LMI negative definite, and bisects the largest admissible
//!   transmission interval.
//! * [`lyapunov`] evaluates the functionals along recorded traces and
//!   audits their reset and flow behaviour.

pub mod lmi;
pub mod lyapunov;
pub mod search;

use serde::{Deserialize, Serialize};

pub use lmi::{assemble_omega, assemble_pi, assemble_xi, check_nd, DecisionVars, NdVerdict};
pub use lyapunov::{eval_lyapunov, monitor_reset_nongrowth, LyapunovBreakdown, ResetReport};
pub use search::{feasibility_search, max_admissible_h, FeasibilityReport, ScalarVars};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Scheme {
    /// Periodic sampling with event-triggered control (certificate Ξ).
    #[default]
    A,
    /// Event-triggered communication (certificate Π).
    B,
}

/// Gains of one manipulator as they enter the certificates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentGains {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub lambda: f64,
    /// Scheme-A trigger gain γ (requires κ > γ).
    pub gamma: f64,
    /// Scheme-B trigger constant c.
    #[serde(default)]
    pub c: f64,
}

/// Scalar system data for the certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityProblem {
    pub scheme: Scheme,
    /// Joint dimension.
    #[serde(default = "default_n")]
    pub n: usize,
    pub master: AgentGains,
    pub slaves: Vec<AgentGains>,
    /// Maximum transmission interval.
    pub h: f64,
    pub d_m: f64,
    pub d_s: f64,
    pub p_m: f64,
    pub p_s: f64,
}

fn default_n() -> usize {
    2
}

impl StabilityProblem {
    pub fn slave_count(&self) -> usize {
        self.slaves.len()
    }

    pub fn h_m(&self) -> f64 {
        self.h + self.d_m
    }

    pub fn h_s(&self) -> f64 {
        self.h + self.d_s
    }

    /// The non-LMI gain conditions κ > γ for every manipulator (scheme A only).
    pub fn gain_conditions_hold(&self) -> bool {
        match self.scheme {
            Scheme::A => std::iter::once(&self.master)
                .chain(&self.slaves)
                .all(|g| g.kappa > g.gamma),
            Scheme::B => true,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: String| Err(crate::Error::InvalidScenario(m));
        if self.slaves.is_empty() {
            return bad("at least one slave is required".into());
        }
        for g in std::iter::once(&self.master).chain(&self.slaves) {
            if [g.alpha, g.beta, g.kappa, g.lambda].iter().any(|v| !(*v > 0.0)) {
                return bad("all gains must be positive".into());
            }
        }
        if !(self.p_m < 1.0 && self.p_s < 1.0) {
            return bad("delay derivative bounds must be < 1".into());
        }
        if [self.h, self.d_m, self.d_s, self.p_m, self.p_s].iter().any(|v| !(*v >= 0.0)) {
            return bad("h, delays and rate bounds must be non-negative".into());
        }
        Ok(())
    }
}
