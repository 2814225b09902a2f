//! Wire format: one compact JSON object per WebSocket text frame, each
//! carrying `"v": 1`.
//!
//! Server to client (`type` tag): `hello`, `snapshot`, `ack`, `reject`,
//! `error`, `fault`. Client to server (`cmd` tag): `set_target`,
//! `clear_target`, `pause`, `resume`, `set_delay`, `set_gain`,
//! `reset_scenario`. An optional integer `id` on a command is echoed in its
//! `ack`/`reject`.

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub q: [f64; 2],
    pub x: [f64; 2],
    /// Forward kinematics of `q`.
    pub endpoint: [f64; 2],
}

/// Trigger activity since the previous snapshot, master first.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Flashes {
    pub control: Vec<bool>,
    pub comm: Vec<bool>,
    pub sent: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Incremented by every `reset_scenario`; `t` is monotone within an epoch.
    pub epoch: u64,
    pub t: f64,
    pub step: u64,
    pub scheme: String,
    pub paused: bool,
    pub master: AgentView,
    pub slaves: Vec<AgentView>,
    /// 1-based slave index of the latest arbitration winner.
    pub grant: Option<usize>,
    pub eta_norms: Vec<f64>,
    pub flashes: Flashes,
    pub sync_error: f64,
    pub target: Option<[f64; 2]>,
    /// `None` when the stability check could not be evaluated.
    pub certificate_violated: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum ServerMessage {
    Hello {
        v: u32,
        version: String,
        scheme: String,
        slaves: usize,
        dt: f64,
    },
    Snapshot {
        v: u32,
        #[serde(flatten)]
        snapshot: Snapshot,
    },
    Ack {
        v: u32,
        id: Option<u64>,
        cmd: String,
    },
    Reject {
        v: u32,
        id: Option<u64>,
        cmd: String,
        reason: String,
    },
    /// The frame could not be parsed as a command.
    Error {
        v: u32,
        reason: String,
    },
    /// The simulation stopped on a numerical fault; `reset_scenario` restarts it.
    Fault {
        v: u32,
        t: f64,
        reason: String,
    },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    /// Steer the master endpoint toward `target` with a virtual spring.
    SetTarget { target: [f64; 2] },
    ClearTarget,
    Pause,
    Resume,
    /// Maximum forward (master to slaves) and backward delays in seconds.
    SetDelay { d_m: f64, d_s: f64 },
    /// `path` is `<who>.<field>` with `who` one of `master`, `slave<i>`,
    /// `slaves`, `all` and `field` a gain name as in the scenario file, e.g.
    /// `kappa` or `control_trigger.gamma`.
    SetGain { path: String, value: f64 },
    ResetScenario,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SetTarget { .. } => "set_target",
            Self::ClearTarget => "clear_target",
            Self::Pause => "pause",
            Self::Resume => "resume",
            Self::SetDelay { .. } => "set_delay",
            Self::SetGain { .. } => "set_gain",
            Self::ResetScenario => "reset_scenario",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct Envelope {
    v: u32,
    #[serde(default)]
    id: Option<u64>,
    #[serde(flatten)]
    command: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("malformed command: {0}")]
    Malformed(String),
    #[error("unsupported protocol version {0}, expected {PROTOCOL_VERSION}")]
    Version(u32),
}

/// Parses a client frame into its optional id and command.
pub fn decode_command(text: &str) -> Result<(Option<u64>, Command), DecodeError> {
    let env: Envelope = serde_json::from_str(text).map_err(|e| DecodeError::Malformed(e.to_string()))?;
    if env.v != PROTOCOL_VERSION {
        return Err(DecodeError::Version(env.v));
    }
    let command = serde_json::from_value(env.command).map_err(|e| DecodeError::Malformed(e.to_string()))?;
    Ok((env.id, command))
}
