//! The regularized training objective
//! `-log p(y|x) + λ_latency L_latency + λ_variance L_variance`,
//! recorded on a [`Tape`] so every parameter gets an exact gradient.

use serde::{Deserialize, Serialize};

use super::alignment::{alignment_parallel, stepwise_probability, with_last_column_forced};
use super::lookback::{attention_energies, beta_parallel};
use super::params::{EncDecStates, HeadParams, LossWeights, Readout};
use super::regularize::{ideal_delay, LatencyCost};
use crate::error::{Error, Result};
use crate::numerics::{Axis, Gradients, Matrix, Tape, Var};

/// Per-head tensors for one (target, source) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentBundle {
    pub p: Matrix,
    pub alpha: Matrix,
    pub e: Matrix,
    pub beta: Matrix,
}

impl AlignmentBundle {
    pub fn compute(head: &HeadParams, states: &EncDecStates, force_last_column: bool) -> Result<Self> {
        let mut p = stepwise_probability(&head.policy, states)?;
        if force_last_column {
            p = with_last_column_forced(&p);
        }
        let alpha = alignment_parallel(&p)?;
        let e = attention_energies(head, states)?;
        let beta = beta_parallel(&alpha, &e)?;
        Ok(AlignmentBundle { p, alpha, e, beta })
    }
}

/// Multi-head monotonic attention with a toy readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmmaModel {
    pub heads: Vec<HeadParams>,
    pub readout: Readout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub weights: LossWeights,
    #[serde(default)]
    pub latency_cost: LatencyCost,
    #[serde(default)]
    pub force_last_column: bool,
}

impl ObjectiveConfig {
    pub fn new(weights: LossWeights) -> Self {
        ObjectiveConfig {
            weights,
            latency_cost: LatencyCost::default(),
            force_last_column: false,
        }
    }
}

/// Value of the objective and its parts. Latency and variance terms are
/// averaged over heads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub loss: f64,
    pub nll: f64,
    pub latency: f64,
    pub variance: f64,
    /// Mean expected delay over heads and target positions.
    pub mean_delay: f64,
}

impl EmmaModel {
    fn for_each_param(&self, mut f: impl FnMut(&[f64])) {
        for head in &self.heads {
            for ffn in [&head.policy.ffn_s, &head.policy.ffn_h] {
                for layer in &ffn.layers {
                    f(layer.weight.as_slice());
                    f(layer.bias.as_slice());
                }
            }
            f(std::slice::from_ref(&head.policy.bias));
            f(head.query.as_slice());
            f(head.key.as_slice());
        }
        f(self.readout.weight.as_slice());
        f(self.readout.bias.as_slice());
    }

    fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        for head in &mut self.heads {
            for ffn in [&mut head.policy.ffn_s, &mut head.policy.ffn_h] {
                for layer in &mut ffn.layers {
                    f(layer.weight.as_mut_slice());
                    f(layer.bias.as_mut_slice());
                }
            }
            f(std::slice::from_mut(&mut head.policy.bias));
            f(head.query.as_mut_slice());
            f(head.key.as_mut_slice());
        }
        f(self.readout.weight.as_mut_slice());
        f(self.readout.bias.as_mut_slice());
    }

    /// Trainable parameters in a fixed order (temperatures are not trained).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.for_each_param(|s| out.extend_from_slice(s));
        out
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each_param(|s| n += s.len());
        n
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::argument(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        self.for_each_param_mut(|s| {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        });
        Ok(())
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut m = self.clone();
        m.set_flat(flat)?;
        Ok(m)
    }

    fn validate(&self, states: &EncDecStates, targets: &[usize]) -> Result<()> {
        if self.heads.is_empty() {
            return Err(Error::argument("model needs at least one head"));
        }
        for head in &self.heads {
            head.policy.validate()?;
        }
        let vocab = self.readout.vocab();
        if vocab < 2 {
            return Err(Error::argument(format!("vocabulary size {vocab} is below 2")));
        }
        if self.readout.weight.rows() != states.v.cols() {
            return Err(Error::Shape {
                op: "readout",
                left: states.v.shape(),
                right: self.readout.weight.shape(),
            });
        }
        if targets.len() != states.target_len() {
            return Err(Error::argument(format!(
                "{} targets for {} decoder states",
                targets.len(),
                states.target_len()
            )));
        }
        if let Some(t) = targets.iter().find(|&&t| t >= vocab) {
            return Err(Error::argument(format!(
                "target index {t} outside vocabulary of {vocab}"
            )));
        }
        Ok(())
    }
}

struct HeadVars {
    ffn_s: Vec<(Var, Var)>,
    ffn_h: Vec<(Var, Var)>,
    bias: Var,
    query: Var,
    key: Var,
    temperature: f64,
}

struct ModelVars {
    heads: Vec<HeadVars>,
    readout_weight: Var,
    readout_bias: Var,
    order: Vec<Var>,
}

fn register(tape: &mut Tape, model: &EmmaModel) -> ModelVars {
    let mut order = Vec::new();
    let mut leaf = |tape: &mut Tape, m: &Matrix| {
        let v = tape.leaf(m.clone());
        order.push(v);
        v
    };
    let mut heads = Vec::new();
    for head in &model.heads {
        let mut ffn = |tape: &mut Tape, layers: &[super::params::Linear]| {
            layers
                .iter()
                .map(|l| (leaf(tape, &l.weight), leaf(tape, &l.bias)))
                .collect::<Vec<_>>()
        };
        let ffn_s = ffn(tape, &head.policy.ffn_s.layers);
        let ffn_h = ffn(tape, &head.policy.ffn_h.layers);
        let bias = leaf(tape, &Matrix::scalar(head.policy.bias));
        let query = leaf(tape, &head.query);
        let key = leaf(tape, &head.key);
        heads.push(HeadVars {
            ffn_s,
            ffn_h,
            bias,
            query,
            key,
            temperature: head.policy.temperature,
        });
    }
    let readout_weight = leaf(tape, &model.readout.weight);
    let readout_bias = leaf(tape, &model.readout.bias);
    ModelVars {
        heads,
        readout_weight,
        readout_bias,
        order,
    }
}

/// `x W + J b`
fn linear(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let rows = tape.value(x).rows();
    let ones = tape.leaf(Matrix::ones(rows, 1));
    let xw = tape.matmul(x, weight)?;
    let b = tape.matmul(ones, bias)?;
    tape.add(xw, b)
}

fn feedforward(tape: &mut Tape, x: Var, layers: &[(Var, Var)]) -> Result<Var> {
    let mut out = x;
    for (i, &(w, b)) in layers.iter().enumerate() {
        if i > 0 {
            out = tape.tanh(out);
        }
        out = linear(tape, out, w, b)?;
    }
    Ok(out)
}

/// Stepwise probabilities of one head on the tape.
fn stepwise_on_tape(tape: &mut Tape, head: &HeadVars, s: Var, h: Var) -> Result<Var> {
    let target_proj = feedforward(tape, s, &head.ffn_s)?;
    let source_proj = feedforward(tape, h, &head.ffn_h)?;
    let source_t = tape.transpose(source_proj);
    let logits = tape.matmul(target_proj, source_t)?;
    let (rows, cols) = tape.value(logits).shape();
    let col = tape.leaf(Matrix::ones(rows, 1));
    let row = tape.leaf(Matrix::ones(1, cols));
    let bias_col = tape.matmul(col, head.bias)?;
    let bias = tape.matmul(bias_col, row)?;
    let shifted = tape.add(logits, bias)?;
    let scaled = tape.scale(shifted, 1.0 / head.temperature);
    Ok(tape.sigmoid(scaled))
}

/// Closed-form alignment on the tape, one target row at a time.
fn alignment_on_tape(tape: &mut Tape, p: Var) -> Result<Var> {
    let (tgt, src) = tape.value(p).shape();
    let ones = tape.leaf(Matrix::ones(src, 1));
    let mut prev = tape.leaf(Matrix::from_fn(1, src, |_, c| if c == 0 { 1.0 } else { 0.0 }));
    let mut rows = Vec::with_capacity(tgt);
    for i in 0..tgt {
        let p_row = tape.select_row(p, i)?;
        let rolled = tape.roll(p_row, 1);
        let rank_one = tape.matmul(ones, rolled)?;
        let ext = tape.triu(rank_one, 1);
        let stay = tape.one_minus(ext);
        let products = tape.cumprod(stay, Axis::AlongRows);
        let transition = tape.triu(products, 0);
        let reach = tape.matmul(prev, transition)?;
        let cur = tape.mul(p_row, reach)?;
        rows.push(cur);
        prev = cur;
    }
    tape.vstack(&rows)
}

fn beta_on_tape(tape: &mut Tape, head: &HeadVars, alpha: Var, s: Var, h: Var) -> Result<Var> {
    let q = tape.matmul(s, head.query)?;
    let k = tape.matmul(h, head.key)?;
    let k_t = tape.transpose(k);
    let dk = tape.value(head.query).cols() as f64;
    let dots = tape.matmul(q, k_t)?;
    let raw = tape.scale(dots, 1.0 / dk.sqrt());
    let cols = tape.value(raw).cols();
    let max = tape.row_max_detached(raw);
    let ones = tape.leaf(Matrix::ones(1, cols));
    let max_b = tape.matmul(max, ones)?;
    let centered = tape.sub(raw, max_b)?;
    let e = tape.exp(centered);
    let prefix = tape.cumsum(e, Axis::AlongRows);
    let inv = tape.recip(prefix)?;
    let normalized = tape.mul(alpha, inv)?;
    let flipped = tape.flip(normalized);
    let suffix = tape.cumsum(flipped, Axis::AlongRows);
    let unflipped = tape.flip(suffix);
    tape.mul(e, unflipped)
}

struct Recorded {
    loss: Var,
    nll: Var,
    latency: Var,
    variance: Var,
    mean_delay: Var,
    vars: ModelVars,
}

fn record(
    tape: &mut Tape,
    model: &EmmaModel,
    states: &EncDecStates,
    targets: &[usize],
    config: &ObjectiveConfig,
) -> Result<Recorded> {
    model.validate(states, targets)?;
    config.weights.validate()?;
    let vars = register(tape, model);
    let s = tape.leaf(states.s.clone());
    let h = tape.leaf(states.h.clone());
    let v = tape.leaf(states.v.clone());
    let (tgt, src) = (states.target_len(), states.source_len());

    let positions = tape.leaf(Matrix::column_vector(
        &(1..=src).map(|k| k as f64).collect::<Vec<_>>(),
    ));
    let positions_sq = tape.leaf(Matrix::column_vector(
        &(1..=src).map(|k| (k * k) as f64).collect::<Vec<_>>(),
    ));
    let ideal = tape.leaf(Matrix::column_vector(
        &(0..tgt).map(|i| ideal_delay(i, src as f64, tgt)).collect::<Vec<_>>(),
    ));
    let (keep, last) = (
        tape.leaf(Matrix::from_fn(tgt, src, |_, c| if c + 1 == src { 0.0 } else { 1.0 })),
        tape.leaf(Matrix::from_fn(tgt, src, |_, c| if c + 1 == src { 1.0 } else { 0.0 })),
    );

    let mut contexts = Vec::new();
    let mut latencies = Vec::new();
    let mut variances = Vec::new();
    let mut delays_sum = Vec::new();
    for head in &vars.heads {
        let mut p = stepwise_on_tape(tape, head, s, h)?;
        if config.force_last_column {
            let kept = tape.mul(p, keep)?;
            p = tape.add(kept, last)?;
        }
        let alpha = alignment_on_tape(tape, p)?;
        let beta = beta_on_tape(tape, head, alpha, s, h)?;
        contexts.push(tape.matmul(beta, v)?);

        let delays = tape.matmul(alpha, positions)?;
        let second = tape.matmul(alpha, positions_sq)?;
        let sq = tape.mul(delays, delays)?;
        let var = tape.sub(second, sq)?;
        let lag = match config.latency_cost {
            LatencyCost::LagBehindIdeal => tape.sub(delays, ideal)?,
            LatencyCost::MeanDelay => delays,
        };
        latencies.push(tape.mean(lag));
        variances.push(tape.mean(var));
        delays_sum.push(tape.mean(delays));
    }
    let n_heads = vars.heads.len() as f64;
    let average = |tape: &mut Tape, parts: &[Var]| -> Result<Var> {
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = tape.add(acc, p)?;
        }
        Ok(tape.scale(acc, 1.0 / n_heads))
    };
    let context = average(tape, &contexts)?;
    let latency = average(tape, &latencies)?;
    let variance = average(tape, &variances)?;
    let mean_delay = average(tape, &delays_sum)?;

    let logits = linear(tape, context, vars.readout_weight, vars.readout_bias)?;
    let vocab = model.readout.vocab();
    // log softmax as z - m - ln(sum exp(z - m)), with m the detached row max
    let max = tape.row_max_detached(logits);
    let ones_v = tape.leaf(Matrix::ones(1, vocab));
    let max_b = tape.matmul(max, ones_v)?;
    let centered = tape.sub(logits, max_b)?;
    let exps = tape.exp(centered);
    let ones_col = tape.leaf(Matrix::ones(vocab, 1));
    let partition = tape.matmul(exps, ones_col)?;
    let log_partition = tape.ln(partition)?;
    let log_partition_b = tape.matmul(log_partition, ones_v)?;
    let log_probs = tape.sub(centered, log_partition_b)?;
    let one_hot = tape.leaf(Matrix::from_fn(tgt, vocab, |r, c| {
        if targets[r] == c {
            1.0
        } else {
            0.0
        }
    }));
    let picked = tape.mul(log_probs, one_hot)?;
    let total = tape.sum(picked);
    let nll = tape.scale(total, -1.0);

    let lat_term = tape.scale(latency, config.weights.lambda_latency);
    let var_term = tape.scale(variance, config.weights.lambda_variance);
    let partial = tape.add(nll, lat_term)?;
    let loss = tape.add(partial, var_term)?;
    Ok(Recorded {
        loss,
        nll,
        latency,
        variance,
        mean_delay,
        vars,
    })
}

fn terms(tape: &Tape, r: &Recorded) -> Result<ObjectiveTerms> {
    Ok(ObjectiveTerms {
        loss: tape.value(r.loss).item()?,
        nll: tape.value(r.nll).item()?,
        latency: tape.value(r.latency).item()?,
        variance: tape.value(r.variance).item()?,
        mean_delay: tape.value(r.mean_delay).item()?,
    })
}

pub fn emma_objective(
    model: &EmmaModel,
    states: &EncDecStates,
    targets: &[usize],
    config: &ObjectiveConfig,
) -> Result<ObjectiveTerms> {
    let mut tape = Tape::new();
    let rec = record(&mut tape, model, states, targets, config)?;
    terms(&tape, &rec)
}

/// Objective value plus its gradient in [`EmmaModel::flatten`] order.
pub fn emma_objective_with_gradient(
    model: &EmmaModel,
    states: &EncDecStates,
    targets: &[usize],
    config: &ObjectiveConfig,
) -> Result<(ObjectiveTerms, Vec<f64>)> {
    let mut tape = Tape::new();
    let rec = record(&mut tape, model, states, targets, config)?;
    let grads: Gradients = tape.backward(rec.loss)?;
    let mut flat = Vec::with_capacity(model.num_params());
    for &var in &rec.vars.order {
        flat.extend_from_slice(grads.wrt(var)?.as_slice());
    }
    Ok((terms(&tape, &rec)?, flat))
}
