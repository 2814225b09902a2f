//! Two-link revolute planar arm in Euler-Lagrange form,
//!
//! ```text
//! M(q) q̈ + C(q, q̇) q̇ + G(q) = τ + f
//! ```
//!
//! with a minimal linear parameterization `M x + C y − G = Y(q, q̇, x, y) θ`.
//! Joint angles are measured from the horizontal axis; gravity (when
//! non-zero) acts along −y.
//!
//! Parameter vector:
//!
//! | index | value                          |
//! |-------|--------------------------------|
//! | 0     | m1·lc1² + m2·l1² + I1          |
//! | 1     | m2·lc2² + I2                   |
//! | 2     | m2·l1·lc2                      |
//! | 3     | (m1·lc1 + m2·l1)·g  (g > 0)    |
//! | 4     | m2·lc2·g            (g > 0)    |

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, JointMatrix, JointVector, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotModel {
    pub l1: f64,
    pub l2: f64,
    pub m1: f64,
    pub m2: f64,
    pub lc1: f64,
    pub lc2: f64,
    pub i1: f64,
    pub i2: f64,
    pub g: f64,
}

impl Default for RobotModel {
    fn default() -> Self {
        Self {
            l1: 1.0,
            l2: 1.0,
            m1: 1.0,
            m2: 1.0,
            lc1: 0.5,
            lc2: 0.5,
            i1: 0.1,
            i2: 0.1,
            g: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantState {
    pub q: JointVector,
    pub qd: JointVector,
}

impl PlantState {
    pub fn new(q: JointVector, qd: JointVector) -> Self {
        Self { q, qd }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qd.iter()).all(|v| v.is_finite())
    }
}

impl RobotModel {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("l1", self.l1),
            ("l2", self.l2),
            ("m1", self.m1),
            ("m2", self.m2),
            ("lc1", self.lc1),
            ("lc2", self.lc2),
            ("i1", self.i1),
            ("i2", self.i2),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidScenario(format!(
                    "robot parameter {name} must be positive, got {v}"
                )));
            }
        }
        if !(self.g >= 0.0 && self.g.is_finite()) {
            return Err(Error::InvalidScenario(format!(
                "gravity must be non-negative, got {}",
                self.g
            )));
        }
        Ok(())
    }

    /// Number of regressor parameters: 3 in the horizontal plane, 5 with gravity.
    pub fn param_count(&self) -> usize {
        if self.g > 0.0 {
            5
        } else {
            3
        }
    }

    /// True parameter vector θ.
    pub fn theta(&self) -> DVector<f64> {
        let mut th = vec![
            self.m1 * self.lc1 * self.lc1 + self.m2 * self.l1 * self.l1 + self.i1,
            self.m2 * self.lc2 * self.lc2 + self.i2,
            self.m2 * self.l1 * self.lc2,
        ];
        if self.g > 0.0 {
            th.push((self.m1 * self.lc1 + self.m2 * self.l1) * self.g);
            th.push(self.m2 * self.lc2 * self.g);
        }
        DVector::from_vec(th)
    }

    fn inertia_coeffs(&self) -> (f64, f64, f64) {
        (
            self.m1 * self.lc1 * self.lc1 + self.m2 * self.l1 * self.l1 + self.i1,
            self.m2 * self.lc2 * self.lc2 + self.i2,
            self.m2 * self.l1 * self.lc2,
        )
    }

    pub fn mass_matrix(&self, q: &JointVector) -> JointMatrix {
        let (a, b, c) = self.inertia_coeffs();
        let c2 = q[1].cos();
        let m11 = a + b + 2.0 * c * c2;
        let m12 = b + c * c2;
        JointMatrix::new(m11, m12, m12, b)
    }

    /// Coriolis/centripetal matrix from Christoffel symbols, so that
    /// `Ṁ − 2C` is skew-symmetric.
    pub fn coriolis_matrix(&self, q: &JointVector, qd: &JointVector) -> JointMatrix {
        let (_, _, c) = self.inertia_coeffs();
        let h = -c * q[1].sin();
        JointMatrix::new(h * qd[1], h * (qd[0] + qd[1]), -h * qd[0], 0.0)
    }

    pub fn gravity_vector(&self, q: &JointVector) -> JointVector {
        if self.g == 0.0 {
            return JointVector::zeros();
        }
        let c1 = q[0].cos();
        let c12 = (q[0] + q[1]).cos();
        let g1 = (self.m1 * self.lc1 + self.m2 * self.l1) * self.g * c1
            + self.m2 * self.lc2 * self.g * c12;
        let g2 = self.m2 * self.lc2 * self.g * c12;
        JointVector::new(g1, g2)
    }

    /// Regressor with `Y(q, q̇, x, y) θ = M(q) x + C(q, q̇) y − G(q)`.
    pub fn regressor(
        &self,
        q: &JointVector,
        qd: &JointVector,
        x: &JointVector,
        y: &JointVector,
    ) -> DMatrix<f64> {
        let p = self.param_count();
        let (c2, s2) = (q[1].cos(), q[1].sin());
        let mut yr = DMatrix::zeros(2, p);
        yr[(0, 0)] = x[0];
        yr[(0, 1)] = x[0] + x[1];
        yr[(0, 2)] = c2 * (2.0 * x[0] + x[1]) - s2 * (qd[1] * y[0] + (qd[0] + qd[1]) * y[1]);
        yr[(1, 1)] = x[0] + x[1];
        yr[(1, 2)] = c2 * x[0] + s2 * qd[0] * y[0];
        if p == 5 {
            let c1 = q[0].cos();
            let c12 = (q[0] + q[1]).cos();
            yr[(0, 3)] = -c1;
            yr[(0, 4)] = -c12;
            yr[(1, 4)] = -c12;
        }
        yr
    }

    /// Joint accelerations `q̈ = M⁻¹(τ + f − C q̇ − G)`.
    pub fn forward_dynamics(
        &self,
        state: &PlantState,
        tau: &JointVector,
        force: &JointVector,
    ) -> Result<JointVector> {
        let m = self.mass_matrix(&state.q);
        let rhs = tau + force
            - self.coriolis_matrix(&state.q, &state.qd) * state.qd
            - self.gravity_vector(&state.q);
        let qdd = m
            .cholesky()
            .map(|ch| ch.solve(&rhs))
            .unwrap_or_else(|| JointVector::repeat(f64::NAN));
        if qdd.iter().all(|v| v.is_finite()) {
            Ok(qdd)
        } else {
            Err(Error::NonFinite {
                t: f64::NAN,
                variable: "qdd".into(),
            })
        }
    }

    /// Eigenvalue bounds `[λ_min, λ_max]` of M(q) over all q.
    ///
    /// M is affine in cos(q2) ∈ [−1, 1]; λ_min is concave and λ_max convex in
    /// M, so both extremes sit at cos(q2) = ±1.
    pub fn inertia_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for q2 in [0.0, std::f64::consts::PI] {
            let eig = SymmetricEigen::new(self.mass_matrix(&JointVector::new(0.0, q2)));
            lo = lo.min(eig.eigenvalues.min());
            hi = hi.max(eig.eigenvalues.max());
        }
        (lo, hi)
    }

    /// Constant c with `|C(q, x) y| ≤ c |x| |y|`.
    ///
    /// `C(q, x) y = m2·l1·lc2·sin(q2)·(−(x2 y1 + x1 y2 + x2 y2), x1 y1)`; the two
    /// bilinear forms have spectral norms φ (golden ratio) and 1.
    pub fn coriolis_bound(&self) -> f64 {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        self.m2 * self.l1 * self.lc2 * (phi * phi + 1.0).sqrt()
    }

    /// Constant g with `|G(q)| ≤ g` (term-wise triangle inequality).
    pub fn gravity_bound(&self) -> f64 {
        self.g * (self.m1 * self.lc1 + self.m2 * (self.l1 + self.lc2)) + self.g * self.m2 * self.lc2
    }

    pub fn kinetic_energy(&self, state: &PlantState) -> f64 {
        0.5 * state.qd.dot(&(self.mass_matrix(&state.q) * state.qd))
    }

    /// End-effector position in the arm's base frame.
    pub fn forward_kinematics(&self, q: &JointVector) -> JointVector {
        let q12 = q[0] + q[1];
        JointVector::new(
            self.l1 * q[0].cos() + self.l2 * q12.cos(),
            self.l1 * q[0].sin() + self.l2 * q12.sin(),
        )
    }

    pub fn jacobian(&self, q: &JointVector) -> JointMatrix {
        let q12 = q[0] + q[1];
        let (s1, c1, s12, c12) = (q[0].sin(), q[0].cos(), q12.sin(), q12.cos());
        JointMatrix::new(
            -self.l1 * s1 - self.l2 * s12,
            -self.l2 * s12,
            self.l1 * c1 + self.l2 * c12,
            self.l2 * c12,
        )
    }
}
