use std::io::Write;

use serde::{Deserialize, Serialize};

use super::types::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EventKind {
    Read,
    Write,
    Emit,
    Finish,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: f64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<usize>,
}

/// An output speech chunk handed to playback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Emission {
    pub emit_time_s: f64,
    pub units: usize,
    pub playback_duration_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecisionTrace {
    pub events: Vec<TraceEvent>,
    /// Seconds of source consumed when each output token was written.
    pub delays: Vec<f64>,
    /// Source chunks consumed when each output token was written.
    pub delays_chunks: Vec<usize>,
    pub emissions: Vec<Emission>,
    pub output: Vec<TokenId>,
    pub source_duration_s: f64,
    pub source_len: usize,
    /// The write loop hit `max_target_len` before end of sequence.
    pub capped: bool,
    /// Tokens were forced out after the source ran out.
    pub drained: bool,
}

impl DecisionTrace {
    /// One JSON object per event, newline terminated.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for event in &self.events {
            serde_json::to_writer(&mut out, event)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn emitted_units(&self) -> usize {
        self.emissions.iter().map(|e| e.units).sum()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }
}
