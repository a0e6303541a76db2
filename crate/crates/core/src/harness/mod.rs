//! Corpus evaluation, threshold sweeps, toy training and report output.

pub mod evaluate;
pub mod instances;
pub mod manifest;
pub mod report;
pub mod toy;

pub use evaluate::{evaluate_corpus, threshold_sweep, write_traces, CorpusRun, EvaluationReport, InstanceFailure};
pub use instances::{load_instances, parse_instances, rechunk};
pub use manifest::{build_model, BuiltModel, Manifest, ModelSpec, StochasticParams, ToyModelParams};
pub use report::{emit_report, parse_csv, render, render_csv, render_json, ReportFormat, SweepReport, SweepRow, CSV_HEADER};
pub use toy::{train_toy_policy, StepLog, ToyPolicyModel, ToyTrainConfig, TrainingReport, TrainingRun};
