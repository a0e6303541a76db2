use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::types::{SourceChunk, TokenId};
use crate::error::{Error, Result};
use crate::numerics::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelOutput {
    Token(TokenId),
    EndOfSequence,
}

/// What the streaming runtime needs from a simultaneous model.
///
/// Implementations must be deterministic: the same call history yields the
/// same answers. `encode_prefix` sees the whole consumed prefix every time
/// (the encoder is re-run on each new chunk), so its result may only depend
/// on that prefix and on whether the source is complete.
pub trait IncrementalModel {
    type Encoded;

    fn encode_prefix(&self, chunks: &[SourceChunk], finished: bool) -> Self::Encoded;

    /// One stepwise write probability per attention head for the next token.
    fn head_probabilities(&self, encoded: &Self::Encoded, prefix: &[TokenId]) -> Vec<f64>;

    fn next_token(&self, encoded: &Self::Encoded, prefix: &[TokenId]) -> ModelOutput;
}

/// Encoded prefix of the scripted models: mapped payloads seen so far.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedPrefix {
    pub tokens: Vec<TokenId>,
    pub finished: bool,
}

fn map_tokens(chunks: &[SourceChunk], vocab_map: &HashMap<TokenId, TokenId>, finished: bool) -> ScriptedPrefix {
    ScriptedPrefix {
        tokens: chunks
            .iter()
            .map(|c| *vocab_map.get(&c.payload).unwrap_or(&c.payload))
            .collect(),
        finished,
    }
}

/// Deterministic wait-k copy policy: write token `i` once `max(k, 1) + i - 1`
/// chunks are in, output the mapped payload of chunk `i`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedWaitK {
    pub k: usize,
    #[serde(default)]
    pub vocab_map: HashMap<TokenId, TokenId>,
}

pub fn scripted_waitk_model(k: usize, vocab_map: HashMap<TokenId, TokenId>) -> ScriptedWaitK {
    ScriptedWaitK { k, vocab_map }
}

impl IncrementalModel for ScriptedWaitK {
    type Encoded = ScriptedPrefix;

    fn encode_prefix(&self, chunks: &[SourceChunk], finished: bool) -> ScriptedPrefix {
        map_tokens(chunks, &self.vocab_map, finished)
    }

    fn head_probabilities(&self, encoded: &ScriptedPrefix, prefix: &[TokenId]) -> Vec<f64> {
        let needed = self.k.max(1) + prefix.len();
        vec![if encoded.tokens.len() >= needed { 1.0 } else { 0.0 }]
    }

    fn next_token(&self, encoded: &ScriptedPrefix, prefix: &[TokenId]) -> ModelOutput {
        match encoded.tokens.get(prefix.len()) {
            Some(&t) => ModelOutput::Token(t),
            None => ModelOutput::EndOfSequence,
        }
    }
}

/// Threshold-sensitive scripted policy. Head `h` writes target `i` at source
/// prefix `j` with probability `sigmoid(g(h, i, j) / temperature)`, where
/// `g` is a standard normal drawn once per `(seed, h, i, j)`.
///
/// Writing more than one token ahead of the source is ruled out (probability
/// zero for `i > j + 1`). Token `i` copies chunk `i` when it has been read and
/// otherwise guesses the latest chunk again. End of sequence comes once the
/// source is complete and one token per chunk has been written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedStochastic {
    pub heads: usize,
    pub temperature: f64,
    pub seed: u64,
    #[serde(default)]
    pub vocab_map: HashMap<TokenId, TokenId>,
}

impl ScriptedStochastic {
    pub fn new(heads: usize, temperature: f64, seed: u64) -> Result<Self> {
        if heads == 0 || !(temperature > 0.0) {
            return Err(Error::argument("stochastic model needs heads >= 1 and temperature > 0"));
        }
        Ok(ScriptedStochastic {
            heads,
            temperature,
            seed,
            vocab_map: HashMap::new(),
        })
    }

    /// Stepwise probability of head `head` for target `target` (1-based) after
    /// `consumed` source chunks.
    pub fn probability(&self, head: usize, target: usize, consumed: usize) -> f64 {
        let key = mix(mix(mix(self.seed ^ 0x9E37_79B9_7F4A_7C15, head as u64), target as u64), consumed as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let g: f64 = StandardNormal.sample(&mut rng);
        sigmoid(g / self.temperature)
    }
}

/// splitmix64 step folded with a value.
fn mix(state: u64, value: u64) -> u64 {
    let mut z = state.wrapping_add(value.wrapping_mul(0xBF58_476D_1CE4_E5B9)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl IncrementalModel for ScriptedStochastic {
    type Encoded = ScriptedPrefix;

    fn encode_prefix(&self, chunks: &[SourceChunk], finished: bool) -> ScriptedPrefix {
        map_tokens(chunks, &self.vocab_map, finished)
    }

    fn head_probabilities(&self, encoded: &ScriptedPrefix, prefix: &[TokenId]) -> Vec<f64> {
        let target = prefix.len() + 1;
        let consumed = encoded.tokens.len();
        (0..self.heads)
            .map(|h| if target > consumed + 1 { 0.0 } else { self.probability(h, target, consumed) })
            .collect()
    }

    fn next_token(&self, encoded: &ScriptedPrefix, prefix: &[TokenId]) -> ModelOutput {
        let n = encoded.tokens.len();
        if encoded.finished && prefix.len() >= n {
            return ModelOutput::EndOfSequence;
        }
        match encoded.tokens.get(prefix.len()).or(encoded.tokens.last()) {
            Some(&t) => ModelOutput::Token(t),
            None => ModelOutput::EndOfSequence,
        }
    }
}
