use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::policy::{SourceChunk, StreamInstance, TokenId};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChunk {
    dur_ms: f64,
    token: TokenId,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstance {
    id: String,
    source: Vec<RawChunk>,
    #[serde(default)]
    reference: Vec<TokenId>,
}

/// Parses JSONL instances: `{"id", "source": [{"dur_ms", "token"}], "reference"}`.
/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_instances<R: BufRead>(reader: R) -> Result<Vec<StreamInstance>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawInstance = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(raw.id.clone()) {
            return Err(Error::Validation {
                id: raw.id,
                message: format!("duplicate id on line {}", n + 1),
            });
        }
        let chunks = raw
            .source
            .iter()
            .map(|c| SourceChunk {
                duration_s: c.dur_ms / 1000.0,
                payload: c.token,
            })
            .collect();
        out.push(StreamInstance::new(raw.id, chunks, raw.reference)?);
    }
    Ok(out)
}

pub fn load_instances(path: impl AsRef<Path>) -> Result<Vec<StreamInstance>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_instances(BufReader::new(file))
}

/// Gives every chunk the same duration.
pub fn rechunk(instances: &mut [StreamInstance], chunk_ms: f64) -> Result<()> {
    if !(chunk_ms > 0.0) {
        return Err(Error::argument(format!("chunk duration {chunk_ms} ms must be positive")));
    }
    for inst in instances.iter_mut() {
        for c in &mut inst.source_chunks {
            c.duration_s = chunk_ms / 1000.0;
        }
        *inst = StreamInstance::new(
            std::mem::take(&mut inst.id),
            std::mem::take(&mut inst.source_chunks),
            std::mem::take(&mut inst.reference),
        )?;
    }
    Ok(())
}
