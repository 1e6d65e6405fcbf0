//! Gain-scheduled pitchfork assistance law for pedal-assisted bicycles,
//! with a deterministic closed-loop simulator and stability certificates.
//!
//! The motor target `P` follows
//!
//! ```text
//! dP/dt = alpha(P_H, m*) * (f(P_H, m*) * P - P^3)
//! ```
//!
//! whose stable equilibrium `sqrt(f)` delivers the human share `m*` while the
//! cyclist cooperates, and withdraws assistance once they push past the
//! effort threshold `P_T(m*)`.

pub mod certificates;
pub mod controller;
pub mod error;
pub mod harness;
pub mod humans;
pub mod plant;
pub mod schedule;
pub mod types;

pub use error::{Error, Result};
pub use types::{compute_ratio, Mode, PowerSample, Reference, TickRecord};
