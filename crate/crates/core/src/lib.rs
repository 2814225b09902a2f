//! Deterministic simulator and analysis toolkit for single-master
//! multi-slave teleoperation over a shared, delayed network arbitrated by
//! the Try-Once-Discard (TOD) protocol.
//!
//! Two adaptive schemes are supported:
//!
//! * **Scheme A**: periodic sampling, event-triggered control updates.
//! * **Scheme B**: event-triggered communication, continuous control.
//!
//! The [`stability`] module assembles the LMI certificates for both schemes
//! and evaluates the Lyapunov-Krasovskii functionals along simulated traces.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controllers;
pub mod dynamics;
pub mod error;
pub mod network;
pub mod observers;
pub mod sim;
pub mod stability;

pub use error::{Error, Result};

/// Joint-space vector for the two-link arms.
pub type JointVector = nalgebra::Vector2<f64>;
/// Joint-space 2x2 matrix.
pub type JointMatrix = nalgebra::Matrix2<f64>;
