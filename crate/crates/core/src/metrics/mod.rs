//! Latency and quality metrics over decision traces.

pub mod bleu;
pub mod latency;

pub use bleu::{corpus_bleu, corpus_bleu_tokens, tokenize_13a, QualityReport};
pub use latency::{
    average_lagging, length_adaptive_average_lagging, offsets, InstanceLatency, LatencyReport, LatencyUnit, Offsets,
};
