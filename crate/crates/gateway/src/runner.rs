//! Real-time driver: one thread owns the [`Session`], paces it against the
//! wall clock and fans snapshots out over a broadcast channel.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use tokio::sync::{broadcast, mpsc, oneshot};

use crate::protocol::{Command, ServerMessage, PROTOCOL_VERSION};
use crate::session::Session;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunnerConfig {
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
    pub publish_hz: f64,
    /// Queued commands beyond this are refused.
    pub inbox: usize,
    /// Snapshots buffered per client before the oldest are dropped.
    pub client_buffer: usize,
    /// Cap on steps per pacing tick; beyond it the sim falls behind the
    /// wall clock instead of spiralling.
    pub max_steps_per_tick: usize,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        Self {
            speed: 1.0,
            publish_hz: 60.0,
            inbox: 64,
            client_buffer: 8,
            max_steps_per_tick: 2000,
        }
    }
}

impl RunnerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(format!("speed must be positive, got {}", self.speed));
        }
        if !(self.publish_hz > 0.0 && self.publish_hz.is_finite()) {
            return Err(format!("publish rate must be positive, got {}", self.publish_hz));
        }
        if self.inbox == 0 || self.client_buffer == 0 || self.max_steps_per_tick == 0 {
            return Err("queue sizes must be positive".into());
        }
        Ok(())
    }
}

/// A command plus the channel its verdict goes back on.
#[derive(Debug)]
pub struct Request {
    pub command: Command,
    pub reply: oneshot::Sender<Result<(), String>>,
}

/// Static facts about the running scenario, for `/healthz` and `hello`.
#[derive(Debug, Clone, PartialEq)]
pub struct Info {
    pub scheme: String,
    pub slaves: usize,
    pub dt: f64,
}

/// Shared endpoints of a running simulation. Dropping the last clone stops
/// the thread.
#[derive(Clone)]
pub struct RunnerHandle {
    pub info: Info,
    inbox: mpsc::Sender<Request>,
    frames: broadcast::Sender<Arc<str>>,
    _guard: Arc<StopGuard>,
}

struct StopGuard {
    stop: Arc<AtomicBool>,
    thread: std::sync::Mutex<Option<JoinHandle<()>>>,
}

impl Drop for StopGuard {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.lock().ok().and_then(|mut t| t.take()) {
            let _ = t.join();
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SubmitError {
    #[error("command inbox is full")]
    Busy,
    #[error("simulation has stopped")]
    Stopped,
}

impl RunnerHandle {
    /// Frames (snapshots, faults) published by the simulation thread.
    pub fn subscribe(&self) -> broadcast::Receiver<Arc<str>> {
        self.frames.subscribe()
    }

    /// Queues a command and waits for its verdict.
    pub async fn submit(&self, command: Command) -> Result<Result<(), String>, SubmitError> {
        let (tx, rx) = oneshot::channel();
        self.inbox
            .try_send(Request { command, reply: tx })
            .map_err(|e| match e {
                mpsc::error::TrySendError::Full(_) => SubmitError::Busy,
                mpsc::error::TrySendError::Closed(_) => SubmitError::Stopped,
            })?;
        rx.await.map_err(|_| SubmitError::Stopped)
    }

    pub fn hello(&self) -> ServerMessage {
        ServerMessage::Hello {
            v: PROTOCOL_VERSION,
            version: env!("CARGO_PKG_VERSION").into(),
            scheme: self.info.scheme.clone(),
            slaves: self.info.slaves,
            dt: self.info.dt,
        }
    }
}

pub fn spawn(session: Session, config: RunnerConfig) -> Result<RunnerHandle, String> {
    config.validate()?;
    let info = Info {
        scheme: session.scheme().into(),
        slaves: session.simulation().slave_count(),
        dt: session.dt(),
    };
    let (inbox, rx) = mpsc::channel(config.inbox);
    let (frames, _) = broadcast::channel(config.client_buffer);
    let stop = Arc::new(AtomicBool::new(false));
    let thread = {
        let frames = frames.clone();
        let stop = stop.clone();
        std::thread::Builder::new()
            .name("todsim-sim".into())
            .spawn(move || run(session, config, rx, frames, stop))
            .map_err(|e| e.to_string())?
    };
    Ok(RunnerHandle {
        info,
        inbox,
        frames,
        _guard: Arc::new(StopGuard {
            stop,
            thread: std::sync::Mutex::new(Some(thread)),
        }),
    })
}

fn publish(frames: &broadcast::Sender<Arc<str>>, msg: ServerMessage) {
    // No subscribers is fine: the snapshot is simply dropped.
    let _ = frames.send(msg.to_json().into());
}

fn snapshot_frame(session: &mut Session) -> ServerMessage {
    ServerMessage::Snapshot {
        v: PROTOCOL_VERSION,
        snapshot: session.snapshot(),
    }
}

fn run(
    mut session: Session,
    config: RunnerConfig,
    mut inbox: mpsc::Receiver<Request>,
    frames: broadcast::Sender<Arc<str>>,
    stop: Arc<AtomicBool>,
) {
    let period = Duration::from_secs_f64(1.0 / config.publish_hz);
    let dt = session.dt();
    // Wall-clock anchor: sim time `anchor_t` corresponds to `anchor_wall`.
    let mut anchor_wall = Instant::now();
    let mut anchor_t = session.time();
    let mut next_publish = anchor_wall;
    while !stop.load(Ordering::Relaxed) {
        let mut publish_now = false;
        loop {
            let req = match inbox.try_recv() {
                Ok(r) => r,
                Err(mpsc::error::TryRecvError::Empty) => break,
                Err(mpsc::error::TryRecvError::Disconnected) => return,
            };
            let was_running = session.is_running();
            let reset = matches!(req.command, Command::ResetScenario);
            let verdict = session.apply(req.command);
            if verdict.is_ok() && (reset || session.is_running() != was_running) {
                // Re-anchor so pauses leave no gap in simulated time.
                anchor_wall = Instant::now();
                anchor_t = session.time();
                publish_now |= reset;
            }
            let _ = req.reply.send(verdict);
        }
        if publish_now {
            publish(&frames, snapshot_frame(&mut session));
        }

        let now = Instant::now();
        if session.is_running() {
            let target = anchor_t + (now - anchor_wall).as_secs_f64() * config.speed;
            let due = ((target - session.time()) / dt).floor().max(0.0) as usize;
            let steps = due.min(config.max_steps_per_tick);
            for _ in 0..steps {
                if let Err(e) = session.step() {
                    publish(
                        &frames,
                        ServerMessage::Fault {
                            v: PROTOCOL_VERSION,
                            t: session.time(),
                            reason: e.to_string(),
                        },
                    );
                    break;
                }
            }
            if due > steps {
                anchor_wall = now;
                anchor_t = session.time();
            }
        }

        let now = Instant::now();
        if now >= next_publish {
            publish(&frames, snapshot_frame(&mut session));
            next_publish += period;
            if next_publish < now {
                next_publish = now + period;
            }
        }
        let wake = next_publish.min(now + Duration::from_millis(1));
        std::thread::sleep(wake.saturating_duration_since(Instant::now()));
    }
}
