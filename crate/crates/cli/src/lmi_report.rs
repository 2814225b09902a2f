//! `verify-lmi` output: a readable table followed by `key=value` lines.

use std::fmt::Write as _;

use todsim_core::stability::search::ND_TOL;
use todsim_core::stability::{feasibility_search, max_admissible_h, Scheme, StabilityProblem};
use todsim_core::Result;

pub fn verify(p: &StabilityProblem, bisect: Option<(f64, f64)>) -> Result<String> {
    let report = feasibility_search(p)?;
    let h_star = match bisect {
        Some((h_max, step)) => Some(max_admissible_h(p, h_max, step)?),
        None => None,
    };
    let cert = match p.scheme {
        Scheme::A => "xi",
        Scheme::B => "pi",
    };
    let scheme = match p.scheme {
        Scheme::A => "A",
        Scheme::B => "B",
    };
    let rows: Vec<(String, f64, bool)> = report
        .omega
        .iter()
        .enumerate()
        .map(|(i, v)| (format!("omega_{}", i + 1), v.lambda_max, v.negative_definite))
        .chain(
            report
                .certificate
                .iter()
                .enumerate()
                .map(|(i, v)| (format!("{cert}_{}", i + 1), v.lambda_max, v.negative_definite)),
        )
        .collect();

    let mut s = String::new();
    let _ = writeln!(
        s,
        "problem: scheme {scheme}, N = {}, n = {}, h = {}, d_m = {}, d_s = {}, p_m = {}, p_s = {}",
        p.slave_count(),
        p.n,
        p.h,
        p.d_m,
        p.d_s,
        p.p_m,
        p.p_s
    );
    let _ = writeln!(
        s,
        "gain conditions: {}",
        if report.gain_conditions { "satisfied" } else { "violated (kappa > gamma)" }
    );
    let v = &report.vars;
    let _ = writeln!(
        s,
        "decision variables: r_m = {:.6e}, r_s = {:.6e}, p = {:.6e}, u = {:.6e}, q = {:.6e}, z = {:.6e}",
        v.r_m, v.r_s, v.p, v.u, v.q, v.z
    );
    let _ = writeln!(s, "{:<12} {:>16}  verdict", "lmi", "lambda_max");
    for (name, lam, nd) in &rows {
        let _ = writeln!(s, "{name:<12} {lam:>16.6e}  {}", if *nd { "ND" } else { "NOT ND" });
    }
    let _ = writeln!(
        s,
        "verdict: {}",
        if report.feasible { "FEASIBLE" } else { "INFEASIBLE" }
    );
    match h_star {
        Some(Some(h)) => {
            let _ = writeln!(s, "h*: {h}");
        }
        Some(None) => {
            let _ = writeln!(s, "h*: none (infeasible at the smallest grid value)");
        }
        None => {}
    }
    s.push('\n');

    let _ = writeln!(s, "scheme={scheme}");
    let _ = writeln!(s, "slaves={}", p.slave_count());
    let _ = writeln!(s, "h={}", p.h);
    let _ = writeln!(s, "nd_tolerance={ND_TOL}");
    let _ = writeln!(s, "gain_conditions={}", report.gain_conditions);
    for (key, val) in [
        ("r_m", v.r_m),
        ("r_s", v.r_s),
        ("p", v.p),
        ("u", v.u),
        ("q", v.q),
        ("z", v.z),
    ] {
        let _ = writeln!(s, "var_{key}={val}");
    }
    for (name, lam, nd) in &rows {
        let _ = writeln!(s, "{name}_lambda_max={lam}");
        let _ = writeln!(s, "{name}_nd={nd}");
    }
    let worst = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let _ = writeln!(s, "worst_lambda_max={worst}");
    let _ = writeln!(s, "feasible={}", report.feasible);
    if let Some(h) = h_star {
        let _ = writeln!(s, "h_star={}", h.map_or("none".into(), |h| h.to_string()));
    }
    Ok(s)
}
