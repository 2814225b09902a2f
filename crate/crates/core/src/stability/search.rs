//! Feasibility search over scalar-isotropic decision variables.
//!
//! All decision matrices are taken as `s I_n` and shared across slaves, so the
//! LMIs reduce to their `n = 1` versions (the full matrices are the reduced
//! ones Kronecker the identity). The reduced LMIs are affine in the six
//! scalars, so the worst eigenvalue over Ω_i and Ξ_i/Π_i is a convex function
//! of them; the search minimises it and calls the problem feasible when the
//! minimum is below `−ND_TOL`.

use serde::{Deserialize, Serialize};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::lmi::{assemble_certificate_for, assemble_omega, check_nd, DecisionVars, NdVerdict};
use super::StabilityProblem;
use crate::{Error, Result};

/// Scalar values of R_m, R_s, P, U, Q, Z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarVars {
    pub r_m: f64,
    pub r_s: f64,
    pub p: f64,
    pub u: f64,
    pub q: f64,
    pub z: f64,
}

impl ScalarVars {
    pub fn to_decision_vars(&self, n: usize, slaves: usize) -> DecisionVars {
        DecisionVars::isotropic(n, slaves, self.r_m, self.r_s, self.p, self.u, self.q, self.z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    /// Every LMI negative definite and every gain condition satisfied.
    pub feasible: bool,
    pub gain_conditions: bool,
    pub vars: ScalarVars,
    /// One verdict per slave; empty for a single slave.
    pub omega: Vec<NdVerdict>,
    /// Ξ_i (scheme A) or Π_i (scheme B), one per slave.
    pub certificate: Vec<NdVerdict>,
}

impl FeasibilityReport {
    pub fn lmis_feasible(&self) -> bool {
        self.omega.iter().chain(&self.certificate).all(|v| v.negative_definite)
    }
}

/// Tolerance used for the negative-definiteness verdicts.
pub const ND_TOL: f64 = 1e-9;

const VARS: usize = 6;

/// Lower bound kept on every decision scalar so the matrices stay definite.
const FLOOR: f64 = 1e-6;

fn vars_from(v: &[f64; VARS]) -> ScalarVars {
    ScalarVars {
        r_m: v[0],
        r_s: v[1],
        p: v[2],
        u: v[3],
        q: v[4],
        z: v[5],
    }
}

/// The reduced LMIs written as `A(v) = A0 + Σ v_k A_k`.
struct AffineLmis {
    base: Vec<DMatrix<f64>>,
    coeffs: Vec<[DMatrix<f64>; VARS]>,
}

impl AffineLmis {
    fn new(problem: &StabilityProblem) -> Result<Self> {
        let reduced = StabilityProblem {
            n: 1,
            ..problem.clone()
        };
        let slaves = reduced.slave_count();
        let assemble = |v: &[f64; VARS]| -> Result<Vec<DMatrix<f64>>> {
            let dv = vars_from(v).to_decision_vars(1, slaves);
            let mut out = Vec::new();
            for i in 0..slaves {
                if slaves > 1 {
                    out.push(assemble_omega(&reduced, &dv, i)?);
                }
                out.push(assemble_certificate_for(&reduced, &dv, i)?);
            }
            Ok(out)
        };
        // Every entry is affine in the scalars, so differences at unit
        // offsets recover the coefficients exactly.
        let ones = [1.0; VARS];
        let at_ones = assemble(&ones)?;
        let mut per_var = Vec::with_capacity(VARS);
        for k in 0..VARS {
            let mut v = ones;
            v[k] = 2.0;
            let shifted = assemble(&v)?;
            per_var.push(shifted.iter().zip(&at_ones).map(|(a, b)| a - b).collect::<Vec<_>>());
        }
        let base = at_ones
            .iter()
            .enumerate()
            .map(|(l, m)| per_var.iter().fold(m.clone(), |acc, d| acc - &d[l]))
            .collect();
        let coeffs = (0..at_ones.len())
            .map(|l| std::array::from_fn(|k| per_var[k][l].clone()))
            .collect();
        Ok(Self { base, coeffs })
    }

    /// Worst eigenvalue over all LMIs and a subgradient of it.
    fn worst(&self, v: &[f64; VARS]) -> (f64, [f64; VARS]) {
        let mut best = (f64::NEG_INFINITY, [0.0; VARS]);
        for (a0, ak) in self.base.iter().zip(&self.coeffs) {
            let m = ak.iter().zip(v).fold(a0.clone(), |acc, (a, x)| acc + a * *x);
            let eig = SymmetricEigen::new(m);
            let top = eig.eigenvalues.imax();
            if eig.eigenvalues[top] > best.0 {
                let w = eig.eigenvectors.column(top);
                best = (eig.eigenvalues[top], std::array::from_fn(|k| w.dot(&(&ak[k] * w))));
            }
        }
        best
    }
}

/// Minimises the worst eigenvalue over `v ≥ FLOOR` with a central-cut
/// ellipsoid method. The problem is convex, so the result does not depend on
/// where the search starts.
fn minimise(lmis: &AffineLmis) -> ([f64; VARS], f64) {
    const RADIUS: f64 = 1e4;
    let n = VARS as f64;
    let mut x = [RADIUS / 10.0; VARS];
    let mut shape = DMatrix::<f64>::identity(VARS, VARS) * (RADIUS * RADIUS);
    let mut best = ([1.0; VARS], lmis.worst(&[1.0; VARS]).0);
    for _ in 0..20_000 {
        let (g, objective_cut) = match x.iter().position(|&xi| xi < FLOOR) {
            Some(k) => {
                let mut g = [0.0; VARS];
                g[k] = -1.0;
                (g, false)
            }
            None => {
                let (f, g) = lmis.worst(&x);
                if f < best.1 {
                    best = (x, f);
                }
                (g, true)
            }
        };
        let g = DVector::from_column_slice(&g);
        let pg = &shape * &g;
        let spread = g.dot(&pg).sqrt();
        if !(spread > 0.0) || (objective_cut && spread < 1e-10) {
            break;
        }
        let step = pg / spread;
        for (xi, si) in x.iter_mut().zip(step.iter()) {
            *xi -= si / (n + 1.0);
        }
        shape = (&shape - &step * step.transpose() * (2.0 / (n + 1.0))) * (n * n / (n * n - 1.0));
        shape = (&shape + shape.transpose()) * 0.5;
    }
    best
}

/// Evaluates the full-dimensional LMIs at the given scalar variables.
pub fn evaluate(problem: &StabilityProblem, vars: &ScalarVars) -> Result<FeasibilityReport> {
    problem.validate()?;
    let slaves = problem.slave_count();
    let dv = vars.to_decision_vars(problem.n, slaves);
    let mut omega = Vec::new();
    let mut certificate = Vec::new();
    for i in 0..slaves {
        if slaves > 1 {
            omega.push(check_nd(&assemble_omega(problem, &dv, i)?, ND_TOL)?);
        }
        certificate.push(check_nd(&assemble_certificate_for(problem, &dv, i)?, ND_TOL)?);
    }
    let gain_conditions = problem.gain_conditions_hold();
    let mut report = FeasibilityReport {
        feasible: false,
        gain_conditions,
        vars: *vars,
        omega,
        certificate,
    };
    report.feasible = gain_conditions && report.lmis_feasible();
    Ok(report)
}

fn search(problem: &StabilityProblem) -> Result<FeasibilityReport> {
    problem.validate()?;
    let (v, _) = minimise(&AffineLmis::new(problem)?);
    evaluate(problem, &vars_from(&v))
}

/// Searches for decision variables certifying the problem.
pub fn feasibility_search(problem: &StabilityProblem) -> Result<FeasibilityReport> {
    search(problem)
}

/// Largest `h` on the grid `{k·step}` within `[step, h_max]` for which the
/// search certifies the problem, found by bisection on `k` (feasibility is
/// treated as monotone in `h`). `None` if even `h = step` fails.
pub fn max_admissible_h(problem: &StabilityProblem, h_max: f64, step: f64) -> Result<Option<f64>> {
    if !(step > 0.0 && h_max >= step) {
        return Err(Error::InvalidScenario(format!(
            "bisection needs 0 < step <= h_max, got step={step}, h_max={h_max}"
        )));
    }
    // k / (1/step) is exact for decimal steps where k·step is not.
    let per_unit = 1.0 / step;
    let grid = |k: u64| {
        if (per_unit - per_unit.round()).abs() < 1e-9 {
            k as f64 / per_unit.round()
        } else {
            k as f64 * step
        }
    };
    let feasible_at = |k: u64| -> Result<bool> {
        let p = StabilityProblem {
            h: grid(k),
            ..problem.clone()
        };
        Ok(search(&p)?.feasible)
    };
    let mut hi = (h_max / step + 1e-9).floor() as u64;
    let mut lo = 1u64;
    if !feasible_at(lo)? {
        return Ok(None);
    }
    if feasible_at(hi)? {
        return Ok(Some(grid(hi)));
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if feasible_at(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(grid(lo)))
}
