//! Input-convex neural networks for system identification and convex
//! model-predictive control.
//!
//! * [`icnn`] and [`icrnn`]: feedforward and recurrent networks whose outputs are
//!   convex in the decision inputs, with exact gradients and projected training.
//! * [`maxaffine`]: max-of-affine functions, their exact compilation into an
//!   ICNN, piece enumeration of one-layer ICNNs, and a CPL regression baseline.
//! * [`control`]: single-shot minimization and receding-horizon MPC through
//!   learned or exact dynamics, plus random-shooting and linear baselines.
//! * [`plants`] and [`sysid`]: desk-scale simulators and the data pipeline.

pub mod control;
pub mod error;
pub mod experiments;
pub mod icnn;
pub mod icrnn;
pub mod json;
pub mod maxaffine;
pub mod numeric;
pub mod plants;
pub mod sysid;
pub mod verify;

pub use error::{Error, Result};
