//! Realtime bridge between a live simulation and browser clients.
//!
//! A dedicated thread owns the simulation ([`Session`]) and paces it against
//! the wall clock. Snapshots go out through one broadcast channel. Each
//! client drops its oldest snapshots when it falls behind, so a slow client
//! never stalls the simulation. Commands reach the thread through a single
//! bounded inbox and are applied between steps.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod protocol;
pub mod runner;
pub mod server;
pub mod session;

pub use protocol::{Command, ServerMessage, Snapshot, PROTOCOL_VERSION};
pub use runner::{spawn, RunnerConfig, RunnerHandle};
pub use server::{bind, router, serve};
pub use session::Session;
