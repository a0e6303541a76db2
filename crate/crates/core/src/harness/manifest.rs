use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::instances::load_instances;
use super::toy::{train_run, toy_dataset, ToyEmbedding, ToyEncoded, ToyPolicyModel, ToyTrainConfig};
use crate::emma::LossWeights;
use crate::error::{Error, Result};
use crate::metrics::LatencyUnit;
use crate::policy::{
    IncrementalModel, ModelOutput, RuntimeConfig, ScriptedPrefix, ScriptedStochastic, ScriptedWaitK, SourceChunk,
    StreamInstance, TokenId,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StochasticParams {
    pub heads: usize,
    pub temperature: f64,
    /// Falls back to the manifest seed.
    pub seed: Option<u64>,
    pub vocab_map: HashMap<TokenId, TokenId>,
}

impl Default for StochasticParams {
    fn default() -> Self {
        StochasticParams {
            heads: 2,
            temperature: 1.0,
            seed: None,
            vocab_map: HashMap::new(),
        }
    }
}

/// Toy policy trained at load time with the manifest seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyModelParams {
    pub source_len: usize,
    pub target_len: usize,
    pub vocab: usize,
    pub d: usize,
    pub heads: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub examples: usize,
    pub lambda_latency: f64,
    pub lambda_variance: f64,
}

impl Default for ToyModelParams {
    fn default() -> Self {
        let c = ToyTrainConfig::default();
        ToyModelParams {
            source_len: c.source_len,
            target_len: c.target_len,
            vocab: c.vocab,
            d: c.d,
            heads: c.heads,
            steps: c.steps,
            learning_rate: c.learning_rate,
            examples: c.examples,
            lambda_latency: 0.0,
            lambda_variance: 0.0,
        }
    }
}

impl ToyModelParams {
    pub fn train_config(&self, seed: u64) -> ToyTrainConfig {
        let w = LossWeights {
            lambda_latency: self.lambda_latency,
            lambda_variance: self.lambda_variance,
        };
        ToyTrainConfig {
            source_len: self.source_len,
            target_len: self.target_len,
            vocab: self.vocab,
            d: self.d,
            heads: self.heads,
            steps: self.steps,
            learning_rate: self.learning_rate,
            examples: self.examples,
            weights: vec![w, w],
            seed,
            ..ToyTrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ModelSpec {
    ScriptedWaitk(ScriptedWaitK),
    ScriptedStochastic(#[serde(default)] StochasticParams),
    ToyTrained(#[serde(default)] ToyModelParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub instances: PathBuf,
    pub model: ModelSpec,
    #[serde(default)]
    pub runtime: RuntimeConfig,
    #[serde(default)]
    pub sweep: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub latency_unit: LatencyUnit,
}

impl Manifest {
    /// Reads a JSON manifest. A relative instance path is resolved against
    /// the manifest's directory and must exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("{}: {e}", path.display()),
        })?;
        if manifest.instances.is_relative() {
            if let Some(dir) = path.parent() {
                manifest.instances = dir.join(&manifest.instances);
            }
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        self.runtime.validate()?;
        if let Some(ts) = &self.sweep {
            if let Some(t) = ts.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
                return Err(Error::argument(format!("sweep threshold {t} outside (0, 1)")));
            }
        }
        if !self.instances.exists() {
            return Err(Error::io(
                &self.instances,
                std::io::Error::new(std::io::ErrorKind::NotFound, "instance file not found"),
            ));
        }
        Ok(())
    }

    pub fn load_instances(&self) -> Result<Vec<StreamInstance>> {
        load_instances(&self.instances)
    }

    pub fn build_model(&self) -> Result<BuiltModel> {
        build_model(&self.model, self.seed)
    }
}

/// Any model a manifest can name.
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltModel {
    WaitK(ScriptedWaitK),
    Stochastic(ScriptedStochastic),
    Toy(ToyPolicyModel),
}

pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<BuiltModel> {
    Ok(match spec {
        ModelSpec::ScriptedWaitk(m) => BuiltModel::WaitK(m.clone()),
        ModelSpec::ScriptedStochastic(p) => {
            let mut m = ScriptedStochastic::new(p.heads, p.temperature, p.seed.unwrap_or(seed))?;
            m.vocab_map = p.vocab_map.clone();
            BuiltModel::Stochastic(m)
        }
        ModelSpec::ToyTrained(p) => {
            let config = p.train_config(seed);
            config.validate()?;
            let embedding = ToyEmbedding { seed, d: config.d };
            let data = toy_dataset(&config, &embedding)?;
            let run = train_run(&config, &data, config.weights[0], |_| {})?;
            BuiltModel::Toy(ToyPolicyModel::from_run(&config, &run))
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum BuiltEncoded {
    Scripted(ScriptedPrefix),
    Toy(ToyEncoded),
}

impl IncrementalModel for BuiltModel {
    type Encoded = BuiltEncoded;

    fn encode_prefix(&self, chunks: &[SourceChunk], finished: bool) -> BuiltEncoded {
        match self {
            BuiltModel::WaitK(m) => BuiltEncoded::Scripted(m.encode_prefix(chunks, finished)),
            BuiltModel::Stochastic(m) => BuiltEncoded::Scripted(m.encode_prefix(chunks, finished)),
            BuiltModel::Toy(m) => BuiltEncoded::Toy(m.encode_prefix(chunks, finished)),
        }
    }

    fn head_probabilities(&self, encoded: &BuiltEncoded, prefix: &[TokenId]) -> Vec<f64> {
        match (self, encoded) {
            (BuiltModel::WaitK(m), BuiltEncoded::Scripted(e)) => m.head_probabilities(e, prefix),
            (BuiltModel::Stochastic(m), BuiltEncoded::Scripted(e)) => m.head_probabilities(e, prefix),
            (BuiltModel::Toy(m), BuiltEncoded::Toy(e)) => m.head_probabilities(e, prefix),
            _ => Vec::new(),
        }
    }

    fn next_token(&self, encoded: &BuiltEncoded, prefix: &[TokenId]) -> ModelOutput {
        match (self, encoded) {
            (BuiltModel::WaitK(m), BuiltEncoded::Scripted(e)) => m.next_token(e, prefix),
            (BuiltModel::Stochastic(m), BuiltEncoded::Scripted(e)) => m.next_token(e, prefix),
            (BuiltModel::Toy(m), BuiltEncoded::Toy(e)) => m.next_token(e, prefix),
            _ => ModelOutput::EndOfSequence,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_relative_instances_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "inst.jsonl", "");
        let m = write(
            dir.path(),
            "m.json",
            r#"{"instances":"inst.jsonl","model":{"kind":"scripted_waitk","params":{"k":2}},"seed":4}"#,
        );
        let manifest = Manifest::load(&m).unwrap();
        assert_eq!(manifest.instances, dir.path().join("inst.jsonl"));
        assert_eq!(manifest.runtime, RuntimeConfig::default());
        assert_eq!(manifest.latency_unit, LatencyUnit::Seconds);
        assert!(matches!(manifest.build_model().unwrap(), BuiltModel::WaitK(ScriptedWaitK { k: 2, .. })));
    }

    #[test]
    fn stochastic_seed_falls_back_to_manifest() {
        let spec: ModelSpec = serde_json::from_str(r#"{"kind":"scripted_stochastic","params":{}}"#).unwrap();
        match build_model(&spec, 9).unwrap() {
            BuiltModel::Stochastic(m) => assert_eq!((m.seed, m.heads), (9, 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_manifests() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "inst.jsonl", "");
        let missing = write(
            dir.path(),
            "a.json",
            r#"{"instances":"nope.jsonl","model":{"kind":"scripted_waitk","params":{"k":1}}}"#,
        );
        assert!(matches!(Manifest::load(&missing), Err(Error::Io { .. })));
        let bad_sweep = write(
            dir.path(),
            "b.json",
            r#"{"instances":"inst.jsonl","model":{"kind":"scripted_waitk","params":{"k":1}},"sweep":[0.5,1.0]}"#,
        );
        assert!(matches!(Manifest::load(&bad_sweep), Err(Error::Argument(_))));
        let garbage = write(dir.path(), "c.json", "{");
        assert!(matches!(Manifest::load(&garbage), Err(Error::Parse { .. })));
    }
}
