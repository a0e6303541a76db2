use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{corpus_bleu_tokens, InstanceLatency, LatencyReport, LatencyUnit, QualityReport};
use crate::policy::{run_stream, DecisionTrace, IncrementalModel, RuntimeConfig, StreamInstance, TokenId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFailure {
    pub id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub threshold: f64,
    pub latency: LatencyReport,
    pub quality: QualityReport,
    pub n_instances: usize,
    pub n_failures: usize,
    pub failures: Vec<InstanceFailure>,
}

/// Report plus the per-instance traces behind it, sorted by instance id.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRun {
    pub report: EvaluationReport,
    pub traces: Vec<(String, DecisionTrace)>,
}

struct Scored {
    latency: InstanceLatency,
    output: Vec<TokenId>,
    reference: Vec<TokenId>,
    trace: DecisionTrace,
}

fn score_instance<M: IncrementalModel>(
    model: &M,
    instance: &StreamInstance,
    config: &RuntimeConfig,
    unit: LatencyUnit,
) -> Result<Scored> {
    let trace = run_stream(model, instance, config)?;
    if instance.reference.is_empty() {
        return Err(Error::Validation {
            id: instance.id.clone(),
            message: "no reference to score against".into(),
        });
    }
    if trace.output.is_empty() {
        return Err(Error::EmptyOutput(instance.id.clone()));
    }
    let latency = InstanceLatency::from_trace(&instance.id, &trace, instance.reference.len(), unit)?;
    Ok(Scored {
        latency,
        output: trace.output.clone(),
        reference: instance.reference.clone(),
        trace,
    })
}

/// Runs every instance on a pool of `workers` threads and aggregates in
/// instance id order, so the result does not depend on scheduling.
pub fn evaluate_corpus<M>(
    model: &M,
    instances: &[StreamInstance],
    config: &RuntimeConfig,
    unit: LatencyUnit,
    workers: usize,
) -> Result<CorpusRun>
where
    M: IncrementalModel + Sync,
{
    config.validate()?;
    if instances.is_empty() {
        return Err(Error::argument("corpus has no instances"));
    }
    if workers == 0 {
        return Err(Error::argument("need at least one worker"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::argument(format!("cannot start worker pool: {e}")))?;
    let mut results: Vec<(String, Result<Scored>)> = pool.install(|| {
        instances
            .par_iter()
            .map(|inst| (inst.id.clone(), score_instance(model, inst, config, unit)))
            .collect()
    });
    results.sort_by(|a, b| a.0.cmp(&b.0));

    let mut per_instance = Vec::new();
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for (id, result) in results {
        match result {
            Ok(s) => {
                per_instance.push(s.latency);
                hyps.push(s.output);
                refs.push(s.reference);
                traces.push((id, s.trace));
            }
            Err(e) => failures.push(InstanceFailure {
                id,
                message: e.to_string(),
            }),
        }
    }
    if per_instance.is_empty() {
        return Err(Error::CorpusFailed(instances.len()));
    }
    let quality = corpus_bleu_tokens(&hyps, &refs)?;
    Ok(CorpusRun {
        report: EvaluationReport {
            threshold: config.threshold,
            latency: LatencyReport::aggregate(per_instance),
            quality,
            n_instances: instances.len(),
            n_failures: failures.len(),
            failures,
        },
        traces,
    })
}

/// One corpus evaluation per threshold, in ascending threshold order.
pub fn threshold_sweep<M>(
    model: &M,
    instances: &[StreamInstance],
    config: &RuntimeConfig,
    thresholds: &[f64],
    unit: LatencyUnit,
    workers: usize,
) -> Result<Vec<CorpusRun>>
where
    M: IncrementalModel + Sync,
{
    if thresholds.len() < 2 {
        return Err(Error::argument(format!(
            "a sweep needs at least two thresholds, got {}",
            thresholds.len()
        )));
    }
    let mut sorted = thresholds.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .into_iter()
        .map(|threshold| {
            let config = RuntimeConfig { threshold, ..*config };
            evaluate_corpus(model, instances, &config, unit, workers)
        })
        .collect()
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

/// Writes `<dir>/<id>.jsonl` event logs, one per traced instance.
pub fn write_traces(dir: &Path, traces: &[(String, DecisionTrace)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (id, trace) in traces {
        let path = dir.join(format!("{}.jsonl", file_stem(id)));
        fs::write(&path, trace.to_jsonl()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
