//! Single-owner live simulation with command application and snapshotting.
//! No threads here; [`crate::runner`] drives it in real time.

use todsim_core::network::DelayProfile;
use todsim_core::sim::{Agent, ForceProfile, ManipulatorGains, Scenario, Simulation};
use todsim_core::stability::{feasibility_search, Scheme};
use todsim_core::Result as SimResult;

use crate::protocol::{AgentView, Command, Flashes, Snapshot};

/// Default virtual spring stiffness for `set_target` (N·m per m).
pub const DEFAULT_SPRING: f64 = 20.0;

#[derive(Debug)]
pub struct Session {
    sim: Simulation,
    /// Scenario as loaded, used by `reset_scenario`.
    base: Scenario,
    pub paused: bool,
    faulted: bool,
    epoch: u64,
    target: Option<[f64; 2]>,
    spring: f64,
    flashes: Flashes,
    certificate_violated: Option<bool>,
}

fn view(agent: &Agent) -> AgentView {
    let e = agent.model.forward_kinematics(&agent.plant.q);
    AgentView {
        q: [agent.plant.q[0], agent.plant.q[1]],
        x: [agent.obs.x[0], agent.obs.x[1]],
        endpoint: [e[0], e[1]],
    }
}

fn scheme_name(s: Scheme) -> &'static str {
    match s {
        Scheme::A => "A",
        Scheme::B => "B",
    }
}

/// `true` when the scenario's certificate LMIs have no solution.
fn certificate_violated(sc: &Scenario) -> Option<bool> {
    feasibility_search(&sc.stability_problem()).ok().map(|r| !r.feasible)
}

impl Session {
    pub fn new(scenario: Scenario) -> SimResult<Self> {
        let sim = Simulation::new(scenario.clone())?;
        let n = sim.slave_count() + 1;
        Ok(Self {
            certificate_violated: certificate_violated(&scenario),
            sim,
            base: scenario,
            paused: false,
            faulted: false,
            epoch: 0,
            target: None,
            spring: DEFAULT_SPRING,
            flashes: empty_flashes(n),
        })
    }

    pub fn with_spring(mut self, stiffness: f64) -> Self {
        self.spring = stiffness;
        self
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    pub fn time(&self) -> f64 {
        self.sim.time()
    }

    pub fn dt(&self) -> f64 {
        self.sim.scenario().dt
    }

    pub fn scheme(&self) -> &'static str {
        scheme_name(self.sim.scenario().scheme)
    }

    pub fn is_running(&self) -> bool {
        !self.paused && !self.faulted
    }

    /// Advances one step unless paused or faulted. A numerical fault stops
    /// the session until the next reset.
    pub fn step(&mut self) -> SimResult<bool> {
        if !self.is_running() {
            return Ok(false);
        }
        match self.sim.step() {
            Ok(row) => {
                for (j, a) in row.agents().enumerate() {
                    self.flashes.control[j] |= a.control_event;
                    self.flashes.comm[j] |= a.comm_fire;
                    self.flashes.sent[j] |= a.sent;
                }
                Ok(true)
            }
            Err(e) => {
                self.faulted = true;
                Err(e)
            }
        }
    }

    /// Current state; clears the trigger flashes.
    pub fn snapshot(&mut self) -> Snapshot {
        let n = self.sim.slave_count() + 1;
        let flashes = std::mem::replace(&mut self.flashes, empty_flashes(n));
        let sc = self.sim.scenario();
        let offsets = sc.offsets();
        let master = &self.sim.agents[0];
        let slaves = &self.sim.agents[1..];
        let sync = slaves
            .iter()
            .zip(&offsets)
            .map(|(s, g)| (master.plant.q - (s.plant.q - g)).norm())
            .fold(0.0, f64::max);
        Snapshot {
            epoch: self.epoch,
            t: self.sim.time(),
            step: self.sim.step_index(),
            scheme: scheme_name(sc.scheme).into(),
            paused: self.paused || self.faulted,
            master: view(master),
            slaves: slaves.iter().map(view).collect(),
            grant: self.sim.arbiter.i_star.map(|i| i + 1),
            eta_norms: self.sim.arbiter.eta.iter().map(|e| e.norm()).collect(),
            flashes,
            sync_error: sync,
            target: self.target,
            certificate_violated: self.certificate_violated,
        }
    }

    /// Validates and applies a command between steps. A rejected command
    /// leaves the session untouched.
    pub fn apply(&mut self, cmd: Command) -> Result<(), String> {
        match cmd {
            Command::SetTarget { target } => {
                let force = ForceProfile::SpringToTarget {
                    stiffness: self.spring,
                    target,
                };
                force.validate().map_err(|e| e.to_string())?;
                self.sim.set_master_force(force);
                self.target = Some(target);
            }
            Command::ClearTarget => {
                self.sim.set_master_force(self.sim.scenario().master.force);
                self.target = None;
            }
            Command::Pause => self.paused = true,
            Command::Resume => self.paused = false,
            Command::SetDelay { d_m, d_s } => {
                let net = &self.sim.scenario().network;
                let fwd = rescaled(&net.forward, d_m);
                let bwd = rescaled(&net.backward, d_s);
                fwd.validate().map_err(|e| format!("d_m: {e}"))?;
                bwd.validate().map_err(|e| format!("d_s: {e}"))?;
                self.sim.set_delays(fwd, bwd).map_err(|e| e.to_string())?;
                self.certificate_violated = certificate_violated(self.sim.scenario());
            }
            Command::SetGain { path, value } => self.set_gain(&path, value)?,
            Command::ResetScenario => {
                // Keeps live gain and delay edits, restarts motion from t = 0.
                let mut sc = self.base.clone();
                sc.network = self.sim.scenario().network;
                sc.master.gains = self.sim.scenario().master.gains;
                for (s, live) in sc.slaves.iter_mut().zip(&self.sim.scenario().slaves) {
                    s.gains = live.gains;
                }
                self.sim = Simulation::new(sc).map_err(|e| e.to_string())?;
                if let Some(target) = self.target {
                    self.sim.set_master_force(ForceProfile::SpringToTarget {
                        stiffness: self.spring,
                        target,
                    });
                }
                self.faulted = false;
                self.epoch += 1;
                self.flashes = empty_flashes(self.sim.slave_count() + 1);
            }
        }
        Ok(())
    }

    fn set_gain(&mut self, path: &str, value: f64) -> Result<(), String> {
        let (who, field) = path
            .split_once('.')
            .ok_or_else(|| format!("gain path `{path}` must look like <who>.<field>"))?;
        let n = self.sim.slave_count();
        let agents: Vec<usize> = match who {
            "master" => vec![0],
            "slaves" => (1..=n).collect(),
            "all" => (0..=n).collect(),
            s => match s.strip_prefix("slave").and_then(|i| i.parse::<usize>().ok()) {
                Some(i) if (1..=n).contains(&i) => vec![i],
                _ => return Err(format!("unknown manipulator `{who}`")),
            },
        };
        let mut sc = self.sim.scenario().clone();
        let mut updated = Vec::new();
        for &j in &agents {
            let mut g = if j == 0 { sc.master_gains() } else { sc.slave_gains(j - 1) };
            let slot = gain_field(&mut g, field).ok_or_else(|| format!("unknown gain `{field}`"))?;
            *slot = value;
            if j == 0 {
                sc.master.gains = Some(g);
            } else {
                sc.slaves[j - 1].gains = Some(g);
            }
            updated.push((j, g));
        }
        sc.validate().map_err(|e| e.to_string())?;
        if sc.scheme == Scheme::A {
            for (j, g) in &updated {
                if !(g.kappa > g.control_trigger.gamma) {
                    let name = if *j == 0 { "master".to_string() } else { format!("slave{j}") };
                    return Err(format!(
                        "gain condition kappa > gamma violated for {name} (kappa = {}, gamma = {})",
                        g.kappa, g.control_trigger.gamma
                    ));
                }
            }
        }
        for (j, g) in updated {
            self.sim.set_gains(j, g);
        }
        self.certificate_violated = certificate_violated(self.sim.scenario());
        Ok(())
    }
}

/// Same waveform with a new bound; the frequency scales inversely so the
/// rate bound p stays put and only the delay itself changes.
fn rescaled(p: &DelayProfile, max: f64) -> DelayProfile {
    let omega = if p.max > 0.0 && max > 0.0 { p.omega * p.max / max } else { p.omega };
    DelayProfile::new(max, p.amplitude, omega)
}

fn empty_flashes(n: usize) -> Flashes {
    Flashes {
        control: vec![false; n],
        comm: vec![false; n],
        sent: vec![false; n],
    }
}

fn gain_field<'a>(g: &'a mut ManipulatorGains, field: &str) -> Option<&'a mut f64> {
    Some(match field {
        "alpha" => &mut g.alpha,
        "beta" => &mut g.beta,
        "kappa" => &mut g.kappa,
        "lambda" => &mut g.lambda,
        "adapt_gain" => &mut g.adapt_gain,
        "control_trigger.gamma" => &mut g.control_trigger.gamma,
        "control_trigger.epsilon" => &mut g.control_trigger.epsilon,
        "control_trigger.nu" => &mut g.control_trigger.nu,
        "comm_trigger.c" => &mut g.comm_trigger.c,
        "comm_trigger.epsilon" => &mut g.comm_trigger.epsilon,
        "comm_trigger.nu" => &mut g.comm_trigger.nu,
        _ => return None,
    })
}
