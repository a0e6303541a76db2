//! Toy training of the policy heads on a copy-like task with frozen states,
//! and a streaming wrapper so the trained heads can drive the runtime.

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emma::{
    emma_objective, emma_objective_with_gradient, EmmaModel, EncDecStates, HeadConfig, HeadParams, LossWeights,
    ObjectiveConfig, ObjectiveTerms, Readout,
};
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Matrix};
use crate::policy::{IncrementalModel, ModelOutput, SourceChunk, TokenId};

const SOURCE_SLOT: u64 = 1;
const TARGET_SLOT: u64 = 2;
const SOURCE_POS: u64 = 3;
const TARGET_POS: u64 = 4;
const BOS: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyTrainConfig {
    pub source_len: usize,
    pub target_len: usize,
    pub vocab: usize,
    pub d: usize,
    pub heads: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Training pairs per step (full batch).
    pub examples: usize,
    pub weights: Vec<LossWeights>,
    pub seed: u64,
    pub init_bias: f64,
    pub temperature: f64,
    pub init_scale: f64,
    /// Gradient norm cap.
    pub clip: f64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        ToyTrainConfig {
            source_len: 6,
            target_len: 6,
            vocab: 8,
            d: 8,
            heads: 2,
            steps: 500,
            learning_rate: 0.05,
            examples: 8,
            weights: vec![
                LossWeights {
                    lambda_latency: 0.0,
                    lambda_variance: 0.0,
                },
                LossWeights {
                    lambda_latency: 0.5,
                    lambda_variance: 0.0,
                },
            ],
            seed: 0,
            init_bias: -1.0,
            temperature: 1.0,
            init_scale: 0.5,
            clip: 5.0,
        }
    }
}

impl ToyTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() < 2 {
            return Err(Error::argument("toy training compares at least two loss weight settings"));
        }
        for w in &self.weights {
            w.validate()?;
        }
        if self.source_len == 0 || self.target_len == 0 || self.vocab == 0 || self.d == 0 || self.heads == 0 {
            return Err(Error::argument("toy sizes must be positive"));
        }
        if self.examples == 0 {
            return Err(Error::argument("need at least one training example"));
        }
        if !(self.learning_rate > 0.0) || !(self.temperature > 0.0) || !(self.clip > 0.0) {
            return Err(Error::argument("learning rate, temperature and clip must be positive"));
        }
        Ok(())
    }
}

/// Fixed random vectors addressed by `(slot, index)`, so any prefix can be
/// embedded without a table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyEmbedding {
    pub seed: u64,
    pub d: usize,
}

impl ToyEmbedding {
    fn vector(&self, slot: u64, index: u64) -> Vec<f64> {
        let key = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(slot.wrapping_mul(0xD1B5_4A32_D192_ED03))
            ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        (0..self.d).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn summed(&self, a: (u64, u64), b: (u64, u64)) -> Vec<f64> {
        let x = self.vector(a.0, a.1);
        let y = self.vector(b.0, b.1);
        x.iter().zip(&y).map(|(p, q)| (p + q) / 2f64.sqrt()).collect()
    }

    /// Encoder state of source token `token` at position `j` (0-based).
    pub fn source_state(&self, token: TokenId, j: usize) -> Vec<f64> {
        self.summed((SOURCE_SLOT, token as u64), (SOURCE_POS, j as u64))
    }

    /// Decoder state predicting target `i` (0-based) after `previous`.
    pub fn target_state(&self, previous: Option<TokenId>, i: usize) -> Vec<f64> {
        let prev = previous.map_or(BOS, |t| t as u64);
        self.summed((TARGET_SLOT, prev), (TARGET_POS, i as u64))
    }

    pub fn encode_source(&self, tokens: &[TokenId]) -> Matrix {
        let rows: Vec<Vec<f64>> = tokens.iter().enumerate().map(|(j, &t)| self.source_state(t, j)).collect();
        stack(&rows, self.d)
    }

    /// Teacher-forced decoder states for `targets`.
    pub fn encode_target(&self, targets: &[TokenId]) -> Matrix {
        let rows: Vec<Vec<f64>> = (0..targets.len())
            .map(|i| self.target_state(i.checked_sub(1).map(|p| targets[p]), i))
            .collect();
        stack(&rows, self.d)
    }
}

fn stack(rows: &[Vec<f64>], d: usize) -> Matrix {
    Matrix::new(rows.len(), d, rows.concat()).expect("rows have width d")
}

/// Target `i` copies the source token at the proportional position.
pub fn copy_targets(source: &[TokenId], target_len: usize) -> Vec<TokenId> {
    (0..target_len)
        .map(|i| source[i * source.len() / target_len])
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyExample {
    pub source: Vec<TokenId>,
    pub targets: Vec<TokenId>,
    pub states: EncDecStates,
}

pub fn toy_dataset(config: &ToyTrainConfig, embedding: &ToyEmbedding) -> Result<Vec<ToyExample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_DA7A);
    (0..config.examples)
        .map(|_| {
            let source: Vec<TokenId> = (0..config.source_len)
                .map(|_| rng.random_range(0..config.vocab as TokenId))
                .collect();
            let targets = copy_targets(&source, config.target_len);
            let h = embedding.encode_source(&source);
            let states = EncDecStates::new(h.clone(), embedding.encode_target(&targets), h)?;
            Ok(ToyExample {
                source,
                targets,
                states,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub nll: f64,
    pub mean_delay: f64,
    pub mean_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRun {
    pub weights: LossWeights,
    pub log: Vec<StepLog>,
    /// Objective after the last update, averaged over the training set.
    pub final_terms: ObjectiveTerms,
    pub model: EmmaModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub config: ToyTrainConfig,
    pub runs: Vec<TrainingRun>,
}

impl TrainingReport {
    /// `(lambda_latency, lambda_variance, final mean delay, final mean variance)`.
    pub fn comparison(&self) -> Vec<(f64, f64, f64, f64)> {
        self.runs
            .iter()
            .map(|r| {
                (
                    r.weights.lambda_latency,
                    r.weights.lambda_variance,
                    r.final_terms.mean_delay,
                    r.final_terms.variance,
                )
            })
            .collect()
    }
}

pub fn initial_model(config: &ToyTrainConfig) -> Result<EmmaModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let head_config = HeadConfig {
        model_dim: config.d,
        depth: 2,
        init_bias: config.init_bias,
        temperature: config.temperature,
        init_scale: config.init_scale,
    };
    let heads = (0..config.heads)
        .map(|_| HeadParams::random(&head_config, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(EmmaModel {
        heads,
        readout: Readout::random(config.d, config.vocab, config.init_scale, &mut rng),
    })
}

fn objective_config(weights: LossWeights) -> ObjectiveConfig {
    ObjectiveConfig {
        force_last_column: true,
        ..ObjectiveConfig::new(weights)
    }
}

fn average(terms: &[ObjectiveTerms]) -> ObjectiveTerms {
    let n = terms.len() as f64;
    let sum = |f: fn(&ObjectiveTerms) -> f64| terms.iter().map(f).sum::<f64>() / n;
    ObjectiveTerms {
        loss: sum(|t| t.loss),
        nll: sum(|t| t.nll),
        latency: sum(|t| t.latency),
        variance: sum(|t| t.variance),
        mean_delay: sum(|t| t.mean_delay),
    }
}

fn target_indices(targets: &[TokenId]) -> Vec<usize> {
    targets.iter().map(|&t| t as usize).collect()
}

/// Full-batch gradient descent for one weight setting.
pub fn train_run(
    config: &ToyTrainConfig,
    data: &[ToyExample],
    weights: LossWeights,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainingRun> {
    let mut model = initial_model(config)?;
    let objective = objective_config(weights);
    let mut params = model.flatten();
    let mut log = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let results = data
            .par_iter()
            .map(|ex| emma_objective_with_gradient(&model, &ex.states, &target_indices(&ex.targets), &objective))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| match e {
                Error::Domain(_) => Error::Diverged { step, loss: f64::NAN },
                other => other,
            })?;
        let terms: Vec<ObjectiveTerms> = results.iter().map(|(t, _)| *t).collect();
        let mean = average(&terms);
        if !mean.loss.is_finite() {
            return Err(Error::Diverged { step, loss: mean.loss });
        }
        let mut grad = vec![0.0; params.len()];
        for (_, g) in &results {
            for (acc, v) in grad.iter_mut().zip(g) {
                *acc += v / data.len() as f64;
            }
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let factor = if norm > config.clip { config.clip / norm } else { 1.0 };
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= config.learning_rate * factor * g;
        }
        model.set_flat(&params)?;
        let entry = StepLog {
            step,
            loss: mean.loss,
            nll: mean.nll,
            mean_delay: mean.mean_delay,
            mean_variance: mean.variance,
        };
        on_step(&entry);
        log.push(entry);
    }
    let final_terms = average(
        &data
            .iter()
            .map(|ex| emma_objective(&model, &ex.states, &target_indices(&ex.targets), &objective))
            .collect::<Result<Vec<_>>>()?,
    );
    if !final_terms.loss.is_finite() {
        return Err(Error::Diverged {
            step: config.steps,
            loss: final_terms.loss,
        });
    }
    Ok(TrainingRun {
        weights,
        log,
        final_terms,
        model,
    })
}

/// Trains one model per weight setting from the same initialization and data.
pub fn train_toy_policy(config: &ToyTrainConfig) -> Result<TrainingReport> {
    config.validate()?;
    let embedding = ToyEmbedding {
        seed: config.seed,
        d: config.d,
    };
    let data = toy_dataset(config, &embedding)?;
    let runs = config
        .weights
        .iter()
        .map(|&w| train_run(config, &data, w, |_| {}))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingReport {
        config: config.clone(),
        runs,
    })
}

/// Trained heads driving the streaming runtime. The encoder is the frozen toy
/// embedding; the write probability for the next token is the stepwise
/// probability against the newest source state, and tokens are read out from
/// softmax attention over the consumed prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicyModel {
    pub model: EmmaModel,
    pub embedding: ToyEmbedding,
    pub vocab: usize,
    /// Output length per source token.
    pub length_ratio: f64,
}

impl ToyPolicyModel {
    pub fn from_run(config: &ToyTrainConfig, run: &TrainingRun) -> Self {
        ToyPolicyModel {
            model: run.model.clone(),
            embedding: ToyEmbedding {
                seed: config.seed,
                d: config.d,
            },
            vocab: config.vocab,
            length_ratio: config.target_len as f64 / config.source_len as f64,
        }
    }

    fn decoder_state(&self, prefix: &[TokenId]) -> Matrix {
        Matrix::row_vector(&self.embedding.target_state(prefix.last().copied(), prefix.len()))
    }

    fn expected_len(&self, consumed: usize) -> usize {
        ((consumed as f64 * self.length_ratio).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoded {
    pub h: Matrix,
    pub finished: bool,
}

impl IncrementalModel for ToyPolicyModel {
    type Encoded = ToyEncoded;

    fn encode_prefix(&self, chunks: &[SourceChunk], finished: bool) -> ToyEncoded {
        let tokens: Vec<TokenId> = chunks.iter().map(|c| c.payload % self.vocab as TokenId).collect();
        ToyEncoded {
            h: self.embedding.encode_source(&tokens),
            finished,
        }
    }

    fn head_probabilities(&self, encoded: &ToyEncoded, prefix: &[TokenId]) -> Vec<f64> {
        let s = self.decoder_state(prefix);
        let Ok(newest) = encoded.h.select_row(encoded.h.rows().saturating_sub(1)) else {
            return Vec::new();
        };
        self.model
            .heads
            .iter()
            .map(|head| {
                let p = &head.policy;
                let logit = p
                    .ffn_s
                    .forward(&s)
                    .and_then(|a| a.matmul(&p.ffn_h.forward(&newest)?.transpose()))
                    .and_then(|m| m.item());
                logit.map_or(f64::NAN, |l| sigmoid((l + p.bias) / p.temperature))
            })
            .collect()
    }

    fn next_token(&self, encoded: &ToyEncoded, prefix: &[TokenId]) -> ModelOutput {
        if encoded.finished && prefix.len() >= self.expected_len(encoded.h.rows()) {
            return ModelOutput::EndOfSequence;
        }
        let s = self.decoder_state(prefix);
        let scale = 1.0 / (self.embedding.d as f64).sqrt();
        let mut context = Matrix::zeros(1, self.embedding.d);
        for head in &self.model.heads {
            let attended = s
                .matmul(&head.query)
                .and_then(|q| q.matmul(&encoded.h.matmul(&head.key)?.transpose()))
                .map(|e| e.scale(scale).softmax_rows())
                .and_then(|w| w.matmul(&encoded.h));
            match attended {
                Ok(a) => context = context.add(&a).expect("same shape"),
                Err(_) => return ModelOutput::EndOfSequence,
            }
        }
        let context = context.scale(1.0 / self.model.heads.len() as f64);
        let Ok(logits) = context
            .matmul(&self.model.readout.weight)
            .and_then(|l| l.add(&self.model.readout.bias))
        else {
            return ModelOutput::EndOfSequence;
        };
        let best = logits
            .as_slice()
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        ModelOutput::Token(best.0 as TokenId)
    }
}
