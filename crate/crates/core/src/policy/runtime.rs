//! The streaming read/write state machine.
//!
//! Each source chunk is read, the whole consumed prefix is re-encoded, then
//! tokens are written while every head agrees the next token is ready. Pending
//! tokens become output units and are emitted once enough have accumulated.
//! When the source runs out the remaining tokens are forced out and whatever
//! units are left get flushed.

use super::model::{IncrementalModel, ModelOutput};
use super::trace::{DecisionTrace, Emission, EventKind, TraceEvent};
use super::types::{RuntimeConfig, StreamInstance, TokenId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Read,
    Write,
}

/// WRITE when the smallest head probability reaches `threshold` (ties write).
pub fn decide(head_ps: &[f64], threshold: f64) -> Result<Decision> {
    if head_ps.is_empty() {
        return Err(Error::argument("decide needs at least one head"));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::argument(format!("threshold {threshold} outside (0, 1)")));
    }
    let min = head_ps.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(if min >= threshold { Decision::Write } else { Decision::Read })
}

/// A run in progress. Produced by [`StreamState::new`], advanced with
/// [`StreamState::read_step`], finished by [`drain`].
#[derive(Debug, Clone)]
pub struct StreamState<E> {
    consumed: usize,
    consumed_s: f64,
    compute_s: f64,
    encoded: Option<E>,
    pending_tokens: usize,
    ended: bool,
    trace: DecisionTrace,
}

impl<E> StreamState<E> {
    pub fn new(instance: &StreamInstance) -> Self {
        StreamState {
            consumed: 0,
            consumed_s: 0.0,
            compute_s: 0.0,
            encoded: None,
            pending_tokens: 0,
            ended: false,
            trace: DecisionTrace {
                source_duration_s: instance.source_duration_s,
                source_len: instance.source_len(),
                ..DecisionTrace::default()
            },
        }
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    pub fn encoded(&self) -> Option<&E> {
        self.encoded.as_ref()
    }

    /// End of sequence was produced or the length cap was hit.
    pub fn is_ended(&self) -> bool {
        self.ended
    }

    pub fn trace(&self) -> &DecisionTrace {
        &self.trace
    }

    fn now(&self) -> f64 {
        self.consumed_s + self.compute_s
    }

    fn event(&mut self, kind: EventKind, token: Option<TokenId>, units: Option<usize>) {
        let time = self.now();
        self.trace.events.push(TraceEvent {
            time,
            kind,
            token,
            units,
        });
    }

    /// Consumes the next chunk, re-encodes, runs the write loop and the
    /// emission check. Returns false once the source is exhausted.
    pub fn read_step<M>(&mut self, model: &M, instance: &StreamInstance, config: &RuntimeConfig) -> Result<bool>
    where
        M: IncrementalModel<Encoded = E>,
    {
        if self.ended || self.consumed >= instance.source_len() {
            return Ok(false);
        }
        let chunk = instance.source_chunks[self.consumed];
        self.consumed += 1;
        self.consumed_s += chunk.duration_s;
        self.compute_s += config.compute_per_read_s;
        self.event(EventKind::Read, Some(chunk.payload), None);
        let finished = self.consumed == instance.source_len();
        self.encoded = Some(model.encode_prefix(&instance.source_chunks[..self.consumed], finished));
        self.write_loop(model, config, false)?;
        self.emit(config, false);
        Ok(true)
    }

    fn write_loop<M>(&mut self, model: &M, config: &RuntimeConfig, forced: bool) -> Result<()>
    where
        M: IncrementalModel<Encoded = E>,
    {
        let Some(encoded) = self.encoded.take() else {
            return Err(Error::Protocol("write requested before any source was encoded".into()));
        };
        let result = self.write_with(model, &encoded, config, forced);
        self.encoded = Some(encoded);
        result
    }

    fn write_with<M>(&mut self, model: &M, encoded: &E, config: &RuntimeConfig, forced: bool) -> Result<()>
    where
        M: IncrementalModel<Encoded = E>,
    {
        while !self.ended {
            if self.trace.output.len() >= config.max_target_len {
                self.trace.capped = true;
                self.ended = true;
                break;
            }
            if !forced {
                let ps = model.head_probabilities(encoded, &self.trace.output);
                if let Some(p) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                    return Err(Error::Protocol(format!("head probability {p} outside [0, 1]")));
                }
                let decision = decide(&ps, config.threshold)
                    .map_err(|_| Error::Protocol("model returned no head probabilities".into()))?;
                if decision == Decision::Read {
                    break;
                }
            }
            match model.next_token(encoded, &self.trace.output) {
                ModelOutput::EndOfSequence => self.ended = true,
                ModelOutput::Token(token) => {
                    self.compute_s += config.compute_per_write_s;
                    self.trace.output.push(token);
                    self.trace.delays.push(self.consumed_s);
                    self.trace.delays_chunks.push(self.consumed);
                    self.pending_tokens += 1;
                    self.event(EventKind::Write, Some(token), None);
                }
            }
        }
        Ok(())
    }

    fn emit(&mut self, config: &RuntimeConfig, flush: bool) {
        let units = self.pending_tokens * config.units_per_token;
        if units == 0 || (!flush && units < config.min_unit_chunk) {
            return;
        }
        self.pending_tokens = 0;
        self.event(EventKind::Emit, None, Some(units));
        self.trace.emissions.push(Emission {
            emit_time_s: self.now(),
            units,
            playback_duration_s: units as f64 * config.unit_duration_s,
        });
    }
}

/// Finishes a run whose source is fully consumed: writes the remaining tokens
/// without consulting the threshold, flushes pending units and closes the
/// trace with FINISH.
pub fn drain<M>(model: &M, mut state: StreamState<M::Encoded>, config: &RuntimeConfig) -> Result<DecisionTrace>
where
    M: IncrementalModel,
{
    if state.consumed < state.trace.source_len {
        return Err(Error::Protocol(format!(
            "drain called after {} of {} chunks",
            state.consumed, state.trace.source_len
        )));
    }
    if !state.ended {
        let before = state.trace.output.len();
        state.write_loop(model, config, true)?;
        state.trace.drained = state.trace.output.len() > before;
    }
    state.emit(config, true);
    state.event(EventKind::Finish, None, None);
    Ok(state.trace)
}

/// Runs one instance end to end.
pub fn run_stream<M>(model: &M, instance: &StreamInstance, config: &RuntimeConfig) -> Result<DecisionTrace>
where
    M: IncrementalModel,
{
    config.validate()?;
    if instance.source_chunks.is_empty() {
        return Err(Error::Protocol(format!("instance {} has no source to encode", instance.id)));
    }
    let mut state = StreamState::new(instance);
    while state.read_step(model, instance, config)? {}
    if state.ended && state.consumed < instance.source_len() {
        // Capped or finished early: the rest of the source is never read.
        state.emit(config, true);
        state.event(EventKind::Finish, None, None);
        return Ok(state.trace);
    }
    drain(model, state, config)
}
