//! Numerical evaluation of the Lyapunov-Krasovskii functionals along a
//! recorded trajectory.
//!
//! Double integrals `∫_{−H}^0 ∫_{t+v}^t f(σ) dσ dv` are evaluated in the
//! equivalent single-integral form `∫_{t−H}^t (σ − t + H) f(σ) dσ` by
//! composite trapezoid, with linear interpolation at the window edge. The
//! piecewise-constant η history is integrated exactly.
//!
//! The negative V_T term `(s_k − t)/(s_{k+1} − s_k) ηᵀUη` is stored together
//! with `ηᵀQη` as a single `eta` component; it stays non-negative because
//! `U < Q/(N−1) ≤ Q`.

use nalgebra::{DMatrix, DVector};

use super::search::ScalarVars;
use super::{Scheme, StabilityProblem};
use crate::controllers::sync_vars;
use crate::dynamics::{PlantState, RobotModel};
use crate::observers::ObserverState;
use crate::{Error, JointVector, Result};

/// State of one manipulator at a sample instant.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSample {
    pub q: JointVector,
    pub qd: JointVector,
    pub x: JointVector,
    pub xd: JointVector,
    pub theta_hat: DVector<f64>,
}

/// Transmission bookkeeping valid on `[s_k, s_{k+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bookkeeping {
    pub eta: Vec<JointVector>,
    /// Slave granted access at `s_k` (`None` before the first grant).
    pub winner: Option<usize>,
    pub s_k: f64,
    pub s_next: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSample {
    pub t: f64,
    pub master: AgentSample,
    pub slaves: Vec<AgentSample>,
    pub book: Bookkeeping,
    /// Current channel delays `T_m(t)`, `T_s(t)`.
    pub delay_m: f64,
    pub delay_s: f64,
    /// Event errors `x − x̄` (scheme B only; zero otherwise).
    pub delta_m: JointVector,
    pub delta_s: Vec<JointVector>,
}

/// Everything fixed along a trajectory.
#[derive(Debug, Clone)]
pub struct LyapunovContext {
    pub problem: StabilityProblem,
    pub vars: ScalarVars,
    pub model: RobotModel,
    /// Γ⁻¹ shared by all manipulators.
    pub gamma_inv: DMatrix<f64>,
    pub offsets: Vec<JointVector>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LyapunovBreakdown {
    pub master_kinetic: f64,
    pub master_adaptation: f64,
    pub master_error: f64,
    pub master_observer: f64,
    pub slave_kinetic: f64,
    pub slave_adaptation: f64,
    pub slave_observer: f64,
    pub coupling: f64,
    pub slave_error: f64,
    pub v2_master: f64,
    pub v2_slave: f64,
    /// δ integrals of V₂′ (scheme B).
    pub v2_delta: f64,
    pub vt_z: f64,
    pub vt_p: f64,
    pub vt_eta: f64,
}

impl LyapunovBreakdown {
    pub fn v1(&self) -> f64 {
        self.master_kinetic
            + self.master_adaptation
            + self.master_error
            + self.master_observer
            + self.slave_kinetic
            + self.slave_adaptation
            + self.slave_observer
            + self.coupling
            + self.slave_error
    }

    pub fn v2(&self) -> f64 {
        self.v2_master + self.v2_slave + self.v2_delta
    }

    pub fn vt(&self) -> f64 {
        self.vt_z + self.vt_p + self.vt_eta
    }

    pub fn total(&self) -> f64 {
        self.v1() + self.v2() + self.vt()
    }

    pub fn components(&self) -> [(&'static str, f64); 15] {
        [
            ("master_kinetic", self.master_kinetic),
            ("master_adaptation", self.master_adaptation),
            ("master_error", self.master_error),
            ("master_observer", self.master_observer),
            ("slave_kinetic", self.slave_kinetic),
            ("slave_adaptation", self.slave_adaptation),
            ("slave_observer", self.slave_observer),
            ("coupling", self.coupling),
            ("slave_error", self.slave_error),
            ("v2_master", self.v2_master),
            ("v2_slave", self.v2_slave),
            ("v2_delta", self.v2_delta),
            ("vt_z", self.vt_z),
            ("vt_p", self.vt_p),
            ("vt_eta", self.vt_eta),
        ]
    }

    /// Smallest stored component.
    pub fn min_component(&self) -> f64 {
        self.components().iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min)
    }
}

/// Time window of history the functional needs.
pub fn required_history(problem: &StabilityProblem, max_delay: f64) -> f64 {
    let (hm, hs) = match problem.scheme {
        Scheme::A => (problem.h_m(), problem.h_s()),
        Scheme::B => (problem.d_m, problem.d_s),
    };
    hm.max(hs).max(max_delay).max(problem.h)
}

/// `(V_z kinetic, V_z adaptation)` for one manipulator: `½ rᵀMr`, `½ θ̃ᵀΓ⁻¹θ̃`.
fn agent_energy(ctx: &LyapunovContext, a: &AgentSample, lambda: f64) -> (f64, f64, JointVector) {
    let plant = PlantState::new(a.q, a.qd);
    let sync = sync_vars(lambda, &plant, &ObserverState::new(a.x, a.xd));
    let m = ctx.model.mass_matrix(&a.q);
    let kinetic = 0.5 * sync.r.dot(&(m * sync.r));
    let tilde = ctx.model.theta() - &a.theta_hat;
    let adaptation = 0.5 * tilde.dot(&(&ctx.gamma_inv * &tilde));
    (kinetic, adaptation, sync.e)
}

/// Trapezoid of `w(t_j) g_j` over `[t − H, t]`, using rows up to `k`;
/// the integrand is linearly interpolated at the lower edge.
fn windowed_trapezoid(
    history: &[LyapunovSample],
    k: usize,
    window: f64,
    weight: impl Fn(f64) -> f64,
    g: impl Fn(&LyapunovSample) -> f64,
) -> f64 {
    let t = history[k].t;
    let lower = t - window;
    let mut acc = 0.0;
    let mut j = k;
    while j > 0 && history[j - 1].t >= lower {
        let (a, b) = (&history[j - 1], &history[j]);
        acc += 0.5 * (b.t - a.t) * (weight(a.t) * g(a) + weight(b.t) * g(b));
        j -= 1;
    }
    if j > 0 && history[j].t > lower {
        let (a, b) = (&history[j - 1], &history[j]);
        let s = (lower - a.t) / (b.t - a.t);
        let g_edge = (1.0 - s) * g(a) + s * g(b);
        acc += 0.5 * (b.t - lower) * (weight(lower) * g_edge + weight(b.t) * g(b));
    }
    acc
}

/// Exact integral over `[t − T, t]` of the right-continuous step function
/// taking the value `g(row j)` on `[t_j, t_{j+1})`.
fn step_integral(history: &[LyapunovSample], k: usize, window: f64, g: impl Fn(&LyapunovSample) -> f64) -> f64 {
    let t = history[k].t;
    let lower = t - window;
    let mut acc = 0.0;
    let mut j = k;
    while j > 0 {
        let a = &history[j - 1];
        let end = history[j].t;
        let start = a.t.max(lower);
        if end <= lower {
            break;
        }
        acc += (end - start) * g(a);
        j -= 1;
    }
    acc
}

fn index_at(history: &[LyapunovSample], k: usize, s: f64) -> usize {
    let dt = if k > 0 { history[k].t - history[k - 1].t } else { 1.0 };
    let tol = 1e-6 * dt;
    history[..=k].partition_point(|row| row.t < s - tol).min(k)
}

/// Evaluates the functional at row `k` with the supplied bookkeeping
/// (normally `history[k].book`; the reset monitor also passes the
/// pre-reset bookkeeping).
pub fn eval_at(
    ctx: &LyapunovContext,
    history: &[LyapunovSample],
    k: usize,
    book: &Bookkeeping,
) -> Result<LyapunovBreakdown> {
    let p = &ctx.problem;
    let row = &history[k];
    let big_n = row.slaves.len();
    if big_n != p.slave_count() || ctx.offsets.len() != big_n {
        return Err(Error::InvalidScenario(format!(
            "slave count mismatch: trace {big_n}, problem {}, offsets {}",
            p.slave_count(),
            ctx.offsets.len()
        )));
    }
    let needed = required_history(p, row.delay_m.max(row.delay_s));
    let available = row.t - history[0].t;
    if available + 1e-9 < needed {
        return Err(Error::InsufficientHistory { needed, available });
    }
    let nf = big_n as f64;
    let v = &ctx.vars;
    let mut b = LyapunovBreakdown::default();

    let m = &p.master;
    let (kin, adapt, e_m) = agent_energy(ctx, &row.master, m.lambda);
    b.master_kinetic = nf / (2.0 * m.lambda) * kin;
    b.master_adaptation = nf / (2.0 * m.lambda) * adapt;
    b.master_error = 0.5 * nf * m.kappa * e_m.norm_squared();
    b.master_observer = 0.5 * nf * row.master.xd.norm_squared();
    for (i, s) in row.slaves.iter().enumerate() {
        let g = &p.slaves[i];
        let (kin, adapt, e_s) = agent_energy(ctx, s, g.lambda);
        let w = m.beta / (g.beta * g.lambda);
        b.slave_kinetic += 0.5 * w * kin;
        b.slave_adaptation += 0.5 * w * adapt;
        b.slave_observer += 0.5 * m.beta / g.beta * s.xd.norm_squared();
        b.coupling += 0.5 * m.beta * (row.master.x - (s.x - ctx.offsets[i])).norm_squared();
        b.slave_error += 0.5 * m.beta * g.kappa / g.beta * e_s.norm_squared();
    }

    let (hm, hs) = match p.scheme {
        Scheme::A => (p.h_m(), p.h_s()),
        Scheme::B => (p.d_m, p.d_s),
    };
    let t = row.t;
    b.v2_master = nf
        * v.r_m
        * windowed_trapezoid(history, k, hm, |s| s - t + hm, |r| r.master.xd.norm_squared());
    b.v2_slave = v.r_s
        * windowed_trapezoid(
            history,
            k,
            hs,
            |s| s - t + hs,
            |r| r.slaves.iter().map(|s| s.xd.norm_squared()).sum(),
        );
    if p.scheme == Scheme::B {
        b.v2_delta = nf * m.beta / (2.0 * (1.0 - p.p_m))
            * windowed_trapezoid(history, k, row.delay_m, |_| 1.0, |r| r.delta_m.norm_squared())
            + m.beta / (2.0 * (1.0 - p.p_s))
                * windowed_trapezoid(
                    history,
                    k,
                    row.delay_s,
                    |_| 1.0,
                    |r| r.delta_s.iter().map(|d| d.norm_squared()).sum(),
                );
    }

    let h = p.h;
    let losers = |i: usize| book.winner != Some(i);
    if h > 0.0 {
        for i in (0..big_n).filter(|i| losers(*i)) {
            b.vt_z += v.z / (h * h) * step_integral(history, k, row.delay_s, |r| r.book.eta[i].norm_squared());
        }
    }
    let start = index_at(history, k, book.s_k);
    let mut p_int = 0.0;
    for j in start..k {
        let f = |r: &LyapunovSample| r.slaves.iter().map(|s| s.xd.norm_squared()).sum::<f64>();
        p_int += 0.5 * (history[j + 1].t - history[j].t) * (f(&history[j]) + f(&history[j + 1]));
    }
    b.vt_p = h * v.p * p_int;
    let span = book.s_next - book.s_k;
    let frac = if span > 0.0 { ((book.s_k - t) / span).clamp(-1.0, 0.0) } else { 0.0 };
    for (i, eta) in book.eta.iter().enumerate() {
        let mut w = v.q;
        if losers(i) {
            w += frac * v.u;
        }
        b.vt_eta += w * eta.norm_squared();
    }
    Ok(b)
}

pub fn eval_lyapunov(ctx: &LyapunovContext, history: &[LyapunovSample], k: usize) -> Result<LyapunovBreakdown> {
    eval_at(ctx, history, k, &history[k].book)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResetReport {
    /// Transmission instants audited (with enough history).
    pub instants: usize,
    /// Instants skipped: no earlier transmission, or not enough history.
    pub skipped: usize,
    /// Largest `V(s⁺) − V(s⁻)`.
    pub max_jump: f64,
    pub max_jump_at: Option<f64>,
    /// Largest `|V(s⁺) − V(s⁻)|`.
    pub max_abs_jump: f64,
    /// Ω_i negative definite for the supplied variables; when false the
    /// monitor makes no non-growth claim.
    pub precondition_holds: bool,
    pub tolerance: f64,
}

impl ResetReport {
    pub fn passed(&self) -> bool {
        self.precondition_holds && self.max_jump <= self.tolerance
    }
}

/// Evaluates V just before and just after every transmission instant, i.e.
/// every row whose bookkeeping starts at its own time and follows an earlier
/// grant.
pub fn monitor_reset_nongrowth(
    ctx: &LyapunovContext,
    history: &[LyapunovSample],
    tolerance: f64,
) -> Result<ResetReport> {
    let slaves = ctx.problem.slave_count();
    let precondition_holds = if slaves > 1 {
        let dv = ctx.vars.to_decision_vars(ctx.problem.n, slaves);
        let mut ok = true;
        for i in 0..slaves {
            let om = super::lmi::assemble_omega(&ctx.problem, &dv, i)?;
            ok &= super::lmi::check_nd(&om, 0.0)?.negative_definite;
        }
        ok
    } else {
        true
    };
    let mut report = ResetReport {
        instants: 0,
        skipped: 0,
        max_jump: 0.0,
        max_jump_at: None,
        max_abs_jump: 0.0,
        precondition_holds,
        tolerance,
    };
    for k in 1..history.len() {
        let row = &history[k];
        let prev = &history[k - 1].book;
        if row.book == *prev || (row.book.s_k - row.t).abs() > 1e-9 {
            continue;
        }
        // The first sample initialises the network; no interval precedes it.
        if prev.winner.is_none() {
            report.skipped += 1;
            continue;
        }
        let after = match eval_at(ctx, history, k, &row.book) {
            Ok(v) => v.total(),
            Err(Error::InsufficientHistory { .. }) => {
                report.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let before = eval_at(ctx, history, k, prev)?.total();
        let jump = after - before;
        report.instants += 1;
        if report.max_jump_at.is_none() || jump > report.max_jump {
            report.max_jump = jump;
            report.max_jump_at = Some(row.t);
        }
        report.max_abs_jump = report.max_abs_jump.max(jump.abs());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stability::AgentGains;

    fn gains() -> AgentGains {
        AgentGains {
            alpha: 10.0,
            beta: 4.0,
            kappa: 20.0,
            lambda: 2.0,
            gamma: 10.0,
            c: 0.5,
        }
    }

    fn ctx(n_slaves: usize) -> LyapunovContext {
        let model = RobotModel::default();
        let p = model.param_count();
        LyapunovContext {
            problem: StabilityProblem {
                scheme: Scheme::A,
                n: 2,
                master: gains(),
                slaves: vec![gains(); n_slaves],
                h: 0.02,
                d_m: 0.05,
                d_s: 0.05,
                p_m: 0.125,
                p_s: 0.125,
            },
            vars: ScalarVars {
                r_m: 1.0,
                r_s: 2.0,
                p: 5.0,
                u: 0.3,
                q: 1.0,
                z: 0.004,
            },
            gamma_inv: DMatrix::identity(p, p),
            offsets: vec![JointVector::zeros(); n_slaves],
            model,
        }
    }

    fn rest(ctx: &LyapunovContext) -> AgentSample {
        AgentSample {
            q: JointVector::zeros(),
            qd: JointVector::zeros(),
            x: JointVector::zeros(),
            xd: JointVector::zeros(),
            theta_hat: ctx.model.theta(),
        }
    }

    fn history(ctx: &LyapunovContext, dt: f64, steps: usize, f: impl Fn(f64, &mut LyapunovSample)) -> Vec<LyapunovSample> {
        let n = ctx.problem.slave_count();
        (0..=steps)
            .map(|k| {
                let t = k as f64 * dt;
                let mut s = LyapunovSample {
                    t,
                    master: rest(ctx),
                    slaves: vec![rest(ctx); n],
                    book: Bookkeeping {
                        eta: vec![JointVector::zeros(); n],
                        winner: None,
                        s_k: 0.0,
                        s_next: 1e9,
                    },
                    delay_m: 0.05,
                    delay_s: 0.05,
                    delta_m: JointVector::zeros(),
                    delta_s: vec![JointVector::zeros(); n],
                };
                f(t, &mut s);
                s
            })
            .collect()
    }

    #[test]
    fn zero_state_gives_zero() {
        let c = ctx(2);
        let h = history(&c, 1e-3, 200, |_, _| {});
        let b = eval_lyapunov(&c, &h, 200).unwrap();
        assert_eq!(b.total(), 0.0);
    }

    #[test]
    fn master_kinetic_arithmetic() {
        let c = ctx(3);
        let h = history(&c, 1e-3, 200, |t, s| {
            if t > 0.19999 {
                s.master.qd = JointVector::new(1.0, 0.0);
            }
        });
        let b = eval_lyapunov(&c, &h, 200).unwrap();
        let m11 = c.model.mass_matrix(&JointVector::zeros())[(0, 0)];
        let expect = 3.0 / (2.0 * 2.0) * 0.5 * m11;
        assert!((b.master_kinetic - expect).abs() < 1e-15);
        assert_eq!(b.master_adaptation, 0.0);
        assert_eq!(b.master_error, 0.0);
    }

    #[test]
    fn insufficient_history_is_an_error() {
        let c = ctx(2);
        let h = history(&c, 1e-3, 200, |_, _| {});
        assert!(matches!(
            eval_lyapunov(&c, &h, 10),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    /// ẋ_m = (cos t, 0): the double integral has the closed form
    /// ∫_{t−H}^t (σ − t + H) cos²σ dσ, and the trapezoid error halves twice
    /// when dt halves.
    #[test]
    fn double_integral_is_second_order() {
        let c = ctx(2);
        let t_end = 0.5;
        let hm = c.problem.h_m();
        let exact = {
            // ∫ (σ−a) cos²σ with a = t−H: antiderivative of σcos²σ and cos²σ.
            let f1 = |s: f64| s * s / 4.0 + s * (2.0 * s).sin() / 4.0 + (2.0 * s).cos() / 8.0;
            let f0 = |s: f64| s / 2.0 + (2.0 * s).sin() / 4.0;
            let a = t_end - hm;
            (f1(t_end) - f1(a)) - a * (f0(t_end) - f0(a))
        };
        let mut errs = Vec::new();
        for dt in [4e-3, 2e-3, 1e-3] {
            let steps = (t_end / dt).round() as usize;
            let h = history(&c, dt, steps, |t, s| s.master.xd = JointVector::new(t.cos(), 0.0));
            let b = eval_lyapunov(&c, &h, steps).unwrap();
            let num = b.v2_master / (2.0 * c.vars.r_m);
            errs.push((num - exact).abs());
        }
        let r1 = errs[0] / errs[1];
        let r2 = errs[1] / errs[2];
        assert!((3.5..4.5).contains(&r1) && (3.5..4.5).contains(&r2), "{errs:?}");
    }

    #[test]
    fn stationary_resets_do_not_jump() {
        let c = ctx(2);
        let h = history(&c, 1e-3, 400, |t, s| {
            let k = (t / 0.02 + 1e-9).floor();
            s.book.s_k = k * 0.02;
            s.book.s_next = (k + 1.0) * 0.02;
            s.book.winner = Some(k as usize % 2);
        });
        let r = monitor_reset_nongrowth(&c, &h, 1e-6).unwrap();
        assert!(r.instants > 0);
        assert_eq!(r.max_abs_jump, 0.0);
        assert!(r.passed());
    }

    #[test]
    fn infeasible_omega_is_flagged() {
        let mut c = ctx(2);
        c.vars.p = 0.5;
        let h = history(&c, 1e-3, 100, |_, _| {});
        let r = monitor_reset_nongrowth(&c, &h, 1e-6).unwrap();
        assert!(!r.precondition_holds);
        assert!(!r.passed());
    }

    #[test]
    fn eta_component_nonnegative_at_interval_end() {
        let c = ctx(2);
        let h = history(&c, 1e-3, 100, |_, s| {
            s.book.eta = vec![JointVector::new(1.0, -1.0), JointVector::new(0.5, 0.0)];
            s.book.winner = Some(0);
            s.book.s_k = 0.0;
            s.book.s_next = 0.1;
        });
        let b = eval_lyapunov(&c, &h, 100).unwrap();
        assert!(b.vt_eta >= 0.0);
        let expect = 2.0 * c.vars.q + 0.25 * (c.vars.q - c.vars.u);
        assert!((b.vt_eta - expect).abs() < 1e-12);
    }
}
