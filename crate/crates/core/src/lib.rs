//! Black-box control of an unknown linear time-invariant plant under bounded
//! adversarial disturbances and adversarial convex costs.
//!
//! The controller runs in three phases on a single trajectory: exponentially
//! scaled probing identifies `(A, B)` ([`sysid`]), a feasibility SDP on the
//! estimates yields a stabilizing gain that is then used to bleed off the
//! probe energy ([`stabilize`]), and projected online gradient descent over
//! disturbance-action policies finishes the horizon ([`nsc`]). [`pipeline`]
//! wires the phases together; [`lowerbound`] holds two adversaries that
//! force exponential state growth on any controller.

pub mod error;
pub mod lds;
pub mod linalg;

pub use error::{Error, Phase, Result};
pub mod sysid;
pub mod stabilize;
pub mod nsc;
pub mod pipeline;
pub mod lowerbound;
