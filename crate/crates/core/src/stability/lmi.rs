use nalgebra::{DMatrix, SymmetricEigen};

use super::{Scheme, StabilityProblem};
use crate::{Error, Result};

/// Decision matrices of the certificates, each `n × n` symmetric positive
/// definite. Per-slave matrices are indexed by slave.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionVars {
    pub r_m: DMatrix<f64>,
    pub r_s: Vec<DMatrix<f64>>,
    pub p: Vec<DMatrix<f64>>,
    pub u: Vec<DMatrix<f64>>,
    pub q: Vec<DMatrix<f64>>,
    pub z: Vec<DMatrix<f64>>,
}

impl DecisionVars {
    /// Every matrix a scalar multiple of the identity.
    #[allow(clippy::too_many_arguments)]
    pub fn isotropic(n: usize, slaves: usize, r_m: f64, r_s: f64, p: f64, u: f64, q: f64, z: f64) -> Self {
        let id = |s: f64| DMatrix::identity(n, n) * s;
        Self {
            r_m: id(r_m),
            r_s: vec![id(r_s); slaves],
            p: vec![id(p); slaves],
            u: vec![id(u); slaves],
            q: vec![id(q); slaves],
            z: vec![id(z); slaves],
        }
    }

    fn validate(&self, slaves: usize) -> Result<()> {
        let pd = |m: &DMatrix<f64>| m.clone().cholesky().is_some();
        if !pd(&self.r_m) {
            return Err(Error::NotPositiveDefinite("R_m"));
        }
        let groups: [(&'static str, &Vec<DMatrix<f64>>); 5] = [
            ("R_s", &self.r_s),
            ("P", &self.p),
            ("U", &self.u),
            ("Q", &self.q),
            ("Z", &self.z),
        ];
        for (name, g) in groups {
            if g.len() != slaves || !g.iter().all(pd) {
                return Err(Error::NotPositiveDefinite(name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NdVerdict {
    pub negative_definite: bool,
    pub lambda_max: f64,
}

/// Negative definite iff `λ_max(M) < −tol`.
pub fn check_nd(m: &DMatrix<f64>, tol: f64) -> Result<NdVerdict> {
    if !m.is_square() {
        return Err(Error::Asymmetric(f64::INFINITY));
    }
    let asym = (m - m.transpose()).abs().max();
    if asym > tol.max(0.0) {
        return Err(Error::Asymmetric(asym));
    }
    let lambda_max = SymmetricEigen::new(m.clone()).eigenvalues.max();
    Ok(NdVerdict {
        negative_definite: lambda_max < -tol,
        lambda_max,
    })
}

fn set_block(m: &mut DMatrix<f64>, n: usize, bi: usize, bj: usize, block: &DMatrix<f64>) {
    m.view_mut((bi * n, bj * n), (n, n)).copy_from(block);
    if bi != bj {
        m.view_mut((bj * n, bi * n), (n, n)).copy_from(&block.transpose());
    }
}

/// Reset LMI `[[−Q/(N−1) + U, Q], [Q, −P + Q]]` for slave `i`.
pub fn assemble_omega(problem: &StabilityProblem, dv: &DecisionVars, i: usize) -> Result<DMatrix<f64>> {
    let big_n = problem.slave_count();
    if big_n < 2 {
        return Err(Error::TooFewSlaves(big_n));
    }
    dv.validate(big_n)?;
    let n = problem.n;
    let q = &dv.q[i];
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    set_block(&mut m, n, 0, 0, &(-q / (big_n as f64 - 1.0) + &dv.u[i]));
    set_block(&mut m, n, 0, 1, q);
    set_block(&mut m, n, 1, 1, &(-&dv.p[i] + q));
    Ok(m)
}

struct Weights {
    /// Delay weight for master/slave blocks: h + d (scheme A) or d (scheme B).
    w_m: f64,
    w_s: f64,
    extra_m: f64,
    extra_s: f64,
}

fn assemble_certificate(
    problem: &StabilityProblem,
    dv: &DecisionVars,
    i: usize,
    w: Weights,
) -> Result<DMatrix<f64>> {
    let big_n = problem.slave_count();
    dv.validate(big_n)?;
    let n = problem.n;
    if w.w_m <= 0.0 || w.w_s <= 0.0 {
        return Err(Error::StructurallyInfeasible(
            "zero delay weight makes the R_m/R_s diagonal blocks vanish".into(),
        ));
    }
    if big_n > 1 && problem.h <= 0.0 {
        return Err(Error::StructurallyInfeasible(
            "h = 0 makes the η blocks positive semidefinite".into(),
        ));
    }
    let id = DMatrix::<f64>::identity(n, n);
    let m_g = &problem.master;
    let s_g = &problem.slaves[i];
    let others: Vec<usize> = (0..big_n).filter(|j| *j != i).collect();
    let blocks = 4 + 2 * others.len();
    let mut m = DMatrix::zeros(blocks * n, blocks * n);

    let b11 = &id * (-m_g.alpha + w.extra_m) + &dv.r_m * w.w_m;
    let b22 = &id * (-m_g.beta * s_g.alpha / s_g.beta + w.extra_s)
        + &dv.r_s[i] * w.w_s
        + &dv.p[i] * problem.h;
    set_block(&mut m, n, 0, 0, &b11);
    set_block(&mut m, n, 0, 3, &(&id * (-m_g.beta * w.w_s / 2.0)));
    set_block(&mut m, n, 1, 1, &b22);
    set_block(&mut m, n, 1, 2, &(&id * (-m_g.beta * w.w_m / 2.0)));
    set_block(&mut m, n, 2, 2, &(&dv.r_m * -w.w_m));
    set_block(&mut m, n, 3, 3, &(&dv.r_s[i] * -w.w_s));
    let k = others.len();
    for (slot, &j) in others.iter().enumerate() {
        let b5 = 4 + slot;
        let b6 = 4 + k + slot;
        set_block(&mut m, n, b5, b5, &-(&dv.u[j] * problem.h - &dv.z[j]));
        set_block(&mut m, n, b6, b6, &(&dv.z[j] * -(1.0 - problem.p_s)));
        set_block(&mut m, n, 0, b6, &(&id * (m_g.beta * problem.h / 2.0)));
    }
    Ok(m)
}

/// Scheme-A certificate Ξ_i, dimension `n (4 + 2(N−1))`.
pub fn assemble_xi(problem: &StabilityProblem, dv: &DecisionVars, i: usize) -> Result<DMatrix<f64>> {
    if problem.scheme != Scheme::A {
        return Err(Error::InvalidScenario("Ξ belongs to scheme A".into()));
    }
    assemble_certificate(
        problem,
        dv,
        i,
        Weights {
            w_m: problem.h_m(),
            w_s: problem.h_s(),
            extra_m: 0.0,
            extra_s: 0.0,
        },
    )
}

/// Scheme-B certificate Π_i: delay weights d_m, d_s and the trigger
/// constants on the diagonal.
pub fn assemble_pi(problem: &StabilityProblem, dv: &DecisionVars, i: usize) -> Result<DMatrix<f64>> {
    if problem.scheme != Scheme::B {
        return Err(Error::InvalidScenario("Π belongs to scheme B".into()));
    }
    let b = problem.master.beta;
    assemble_certificate(
        problem,
        dv,
        i,
        Weights {
            w_m: problem.d_m,
            w_s: problem.d_s,
            extra_m: b / 2.0 + problem.master.c,
            extra_s: b / 2.0 + problem.slaves[i].c,
        },
    )
}

/// Ξ_i or Π_i depending on the problem's scheme.
pub fn assemble_certificate_for(problem: &StabilityProblem, dv: &DecisionVars, i: usize) -> Result<DMatrix<f64>> {
    match problem.scheme {
        Scheme::A => assemble_xi(problem, dv, i),
        Scheme::B => assemble_pi(problem, dv, i),
    }
}
