//! In-memory trace and its CSV form.
//!
//! Column order (one row per integration step, `t = k·dt`):
//!
//! ```text
//! t,
//! for each manipulator L in m, s1, …, sN:
//!   L_q1, L_q2, L_qd1, L_qd2, L_x1, L_x2, L_xd1, L_xd2,
//!   L_tau1, L_tau2, L_delta1, L_delta2, L_theta0 … L_theta{P−1},
//!   L_ctrl_event, L_comm_fire, L_sent,
//! tod, granted,
//! for each slave i: eta_s{i}_1, eta_s{i}_2
//! ```
//!
//! Flags are `0`/`1`; `granted` is the 1-based slave index or `0` when no
//! arbitration happened yet. Floats are written in shortest round-trip form,
//! so reading a trace back reproduces every value bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, JointVector, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRow {
    pub q: JointVector,
    pub qd: JointVector,
    pub x: JointVector,
    pub xd: JointVector,
    pub tau: JointVector,
    /// Event error `x − x̄` after this row's events (scheme B).
    pub delta: JointVector,
    pub theta_hat: Vec<f64>,
    /// Scheme-A control update at this row.
    pub control_event: bool,
    /// Scheme-B communication trigger fired at this row.
    pub comm_fire: bool,
    /// The manipulator put a sample on the network at this row.
    pub sent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub master: AgentRow,
    pub slaves: Vec<AgentRow>,
    /// A TOD/RR arbitration took place at this row.
    pub tod: bool,
    /// Slave granted at the most recent arbitration (0-based).
    pub granted: Option<usize>,
    /// Transmission errors from the most recent arbitration.
    pub eta: Vec<JointVector>,
}

impl TraceRow {
    pub fn agents(&self) -> impl Iterator<Item = &AgentRow> {
        std::iter::once(&self.master).chain(&self.slaves)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

fn agent_label(k: usize) -> String {
    if k == 0 {
        "m".into()
    } else {
        format!("s{k}")
    }
}

fn header(slaves: usize, params: &[usize]) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for (k, p) in params.iter().enumerate().take(slaves + 1) {
        let l = agent_label(k);
        for name in ["q1", "q2", "qd1", "qd2", "x1", "x2", "xd1", "xd2", "tau1", "tau2", "delta1", "delta2"] {
            h.push(format!("{l}_{name}"));
        }
        for j in 0..*p {
            h.push(format!("{l}_theta{j}"));
        }
        for name in ["ctrl_event", "comm_fire", "sent"] {
            h.push(format!("{l}_{name}"));
        }
    }
    h.push("tod".into());
    h.push("granted".into());
    for i in 1..=slaves {
        h.push(format!("eta_s{i}_1"));
        h.push(format!("eta_s{i}_2"));
    }
    h
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.into()
}

impl Trace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn slave_count(&self) -> usize {
        self.rows.first().map_or(0, |r| r.slaves.len())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Trace(e.to_string());
        let Some(first) = self.rows.first() else {
            w.flush()?;
            return Ok(());
        };
        let params: Vec<usize> = first.agents().map(|a| a.theta_hat.len()).collect();
        w.write_record(header(first.slaves.len(), &params)).map_err(csv_err)?;
        let mut rec: Vec<String> = Vec::new();
        for row in &self.rows {
            rec.clear();
            rec.push(row.t.to_string());
            for a in row.agents() {
                for v in [&a.q, &a.qd, &a.x, &a.xd, &a.tau, &a.delta] {
                    rec.push(v[0].to_string());
                    rec.push(v[1].to_string());
                }
                rec.extend(a.theta_hat.iter().map(|v| v.to_string()));
                rec.push(flag(a.control_event));
                rec.push(flag(a.comm_fire));
                rec.push(flag(a.sent));
            }
            rec.push(flag(row.tod));
            rec.push(row.granted.map_or(0, |g| g + 1).to_string());
            for e in &row.eta {
                rec.push(e[0].to_string());
                rec.push(e[1].to_string());
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let bad = |m: String| Error::Trace(m);
        let head: Vec<String> = r
            .headers()
            .map_err(|e| bad(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if head.is_empty() || (head.len() == 1 && head[0].is_empty()) {
            return Ok(Self::default());
        }
        // Recover N and the parameter counts from the header.
        let slaves = head.iter().filter(|h| h.starts_with("eta_s")).count() / 2;
        let params: Vec<usize> = (0..=slaves)
            .map(|k| {
                let prefix = format!("{}_theta", agent_label(k));
                head.iter().filter(|h| h.starts_with(&prefix)).count()
            })
            .collect();
        if head != header(slaves, &params) {
            return Err(bad("unexpected trace header".into()));
        }
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let mut it = rec.iter();
            let mut num = |what: &str| -> Result<f64> {
                let s = it.next().ok_or_else(|| bad(format!("row {line}: missing {what}")))?;
                s.parse::<f64>()
                    .map_err(|_| bad(format!("row {line}: cannot parse {what} = {s:?}")))
            };
            let t = num("t")?;
            let mut agents = Vec::with_capacity(slaves + 1);
            for p in &params {
                let mut v2 = || -> Result<JointVector> { Ok(JointVector::new(num("value")?, num("value")?)) };
                let q = v2()?;
                let qd = v2()?;
                let x = v2()?;
                let xd = v2()?;
                let tau = v2()?;
                let delta = v2()?;
                let theta_hat = (0..*p).map(|_| num("theta")).collect::<Result<Vec<_>>>()?;
                let control_event = num("flag")? != 0.0;
                let comm_fire = num("flag")? != 0.0;
                let sent = num("flag")? != 0.0;
                agents.push(AgentRow {
                    q,
                    qd,
                    x,
                    xd,
                    tau,
                    delta,
                    theta_hat,
                    control_event,
                    comm_fire,
                    sent,
                });
            }
            let tod = num("tod")? != 0.0;
            let g = num("granted")?;
            let granted = if g >= 1.0 { Some(g as usize - 1) } else { None };
            let eta = (0..slaves)
                .map(|_| Ok(JointVector::new(num("eta")?, num("eta")?)))
                .collect::<Result<Vec<_>>>()?;
            let master = agents.remove(0);
            rows.push(TraceRow {
                t,
                master,
                slaves: agents,
                tod,
                granted,
                eta,
            });
        }
        Ok(Self { rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}
