//! Efficient monotonic multihead attention for simultaneous translation.
//!
//! * [`numerics`]: dense matrices and a reverse-mode tape.
//! * [`emma`]: stepwise probabilities, monotonic alignment, infinite-lookback
//!   attention, latency and variance regularizers, training objective.
//! * [`policy`]: the streaming read/write state machine.
//! * [`metrics`]: AL, LAAL, start/end offsets and corpus BLEU.
//! * [`harness`]: instance files, corpus evaluation, threshold sweeps, toy
//!   training and report emission.

pub mod emma;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod policy;

pub use error::{Error, Result};
pub use numerics::{Axis, Matrix, Tape, Var};
