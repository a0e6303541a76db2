//! Streaming inference: models, the read/write state machine and its traces.

pub mod model;
pub mod runtime;
pub mod trace;
pub mod types;

pub use model::{scripted_waitk_model, IncrementalModel, ModelOutput, ScriptedPrefix, ScriptedStochastic, ScriptedWaitK};
pub use runtime::{decide, drain, run_stream, Decision, StreamState};
pub use trace::{DecisionTrace, Emission, EventKind, TraceEvent};
pub use types::{RuntimeConfig, SourceChunk, StreamInstance, TokenId};
