use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// One timed piece of streaming source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceChunk {
    pub duration_s: f64,
    pub payload: TokenId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamInstance {
    pub id: String,
    pub source_chunks: Vec<SourceChunk>,
    pub reference: Vec<TokenId>,
    pub source_duration_s: f64,
}

impl StreamInstance {
    /// Builds an instance; the total duration is the in-order sum of chunk
    /// durations, the same sum the runtime clock accumulates.
    pub fn new(id: impl Into<String>, source_chunks: Vec<SourceChunk>, reference: Vec<TokenId>) -> Result<Self> {
        let id = id.into();
        if source_chunks.is_empty() {
            return Err(Error::Validation {
                id,
                message: "source has no chunks".into(),
            });
        }
        if let Some(c) = source_chunks.iter().find(|c| !(c.duration_s > 0.0) || !c.duration_s.is_finite()) {
            return Err(Error::Validation {
                id,
                message: format!("chunk duration {} is not positive", c.duration_s),
            });
        }
        let source_duration_s = source_chunks.iter().fold(0.0, |acc, c| acc + c.duration_s);
        Ok(StreamInstance {
            id,
            source_chunks,
            reference,
            source_duration_s,
        })
    }

    /// Equal-duration chunks, one per payload.
    pub fn uniform(id: impl Into<String>, payloads: &[TokenId], chunk_s: f64, reference: Vec<TokenId>) -> Result<Self> {
        StreamInstance::new(
            id,
            payloads
                .iter()
                .map(|&payload| SourceChunk {
                    duration_s: chunk_s,
                    payload,
                })
                .collect(),
            reference,
        )
    }

    pub fn source_len(&self) -> usize {
        self.source_chunks.len()
    }
}

/// Knobs of the streaming state machine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuntimeConfig {
    /// Write when the minimum head probability reaches this value.
    pub threshold: f64,
    /// Minimum number of pending units before an output chunk is emitted.
    pub min_unit_chunk: usize,
    pub units_per_token: usize,
    pub unit_duration_s: f64,
    pub max_target_len: usize,
    /// Simulated compute cost added to event times (not to delays).
    pub compute_per_read_s: f64,
    pub compute_per_write_s: f64,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            threshold: 0.5,
            min_unit_chunk: 1,
            units_per_token: 1,
            unit_duration_s: 0.020,
            max_target_len: 512,
            compute_per_read_s: 0.0,
            compute_per_write_s: 0.0,
        }
    }
}

impl RuntimeConfig {
    pub fn with_threshold(threshold: f64) -> Self {
        RuntimeConfig {
            threshold,
            ..RuntimeConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::argument(format!(
                "threshold {} must lie strictly between 0 and 1",
                self.threshold
            )));
        }
        if self.min_unit_chunk == 0 || self.units_per_token == 0 || self.max_target_len == 0 {
            return Err(Error::argument(
                "min_unit_chunk, units_per_token and max_target_len must be positive",
            ));
        }
        if !(self.unit_duration_s >= 0.0) || !(self.compute_per_read_s >= 0.0) || !(self.compute_per_write_s >= 0.0) {
            return Err(Error::argument("durations must be non-negative"));
        }
        Ok(())
    }
}
