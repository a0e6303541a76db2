use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const DEFAULT_BIAS: f64 = -4.0;
pub const DEFAULT_TEMPERATURE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `d_in x d_out`
    pub weight: Matrix,
    /// `1 x d_out`
    pub bias: Matrix,
}

impl Linear {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Linear {
            weight: Matrix::zeros(d_in, d_out),
            bias: Matrix::zeros(1, d_out),
        }
    }

    pub fn random<R: Rng + ?Sized>(d_in: usize, d_out: usize, scale: f64, rng: &mut R) -> Self {
        let std = scale / (d_in as f64).sqrt();
        Linear {
            weight: gaussian(d_in, d_out, std, rng),
            bias: Matrix::zeros(1, d_out),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let ones = Matrix::ones(x.rows(), 1);
        x.matmul(&self.weight)?.add(&ones.matmul(&self.bias)?)
    }
}

/// Feedforward energy projection: `Linear (-> tanh -> Linear)*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub layers: Vec<Linear>,
}

impl FeedForward {
    /// `depth` linear layers with `tanh` between them. Depth 2 gives the
    /// default linear -> tanh -> linear shape.
    pub fn random<R: Rng + ?Sized>(
        d_in: usize,
        hidden: usize,
        d_out: usize,
        depth: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let dims = layer_dims(d_in, hidden, d_out, depth)?;
        Ok(FeedForward {
            layers: dims
                .windows(2)
                .map(|w| Linear::random(w[0], w[1], scale, rng))
                .collect(),
        })
    }

    pub fn zeros(d_in: usize, hidden: usize, d_out: usize, depth: usize) -> Result<Self> {
        let dims = layer_dims(d_in, hidden, d_out, depth)?;
        Ok(FeedForward {
            layers: dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                out = out.tanh();
            }
            out = layer.forward(&out)?;
        }
        Ok(out)
    }
}

fn layer_dims(d_in: usize, hidden: usize, d_out: usize, depth: usize) -> Result<Vec<usize>> {
    if depth == 0 {
        return Err(Error::argument("feedforward depth must be at least 1"));
    }
    let mut dims = vec![d_in];
    dims.extend(std::iter::repeat_n(hidden, depth - 1));
    dims.push(d_out);
    Ok(dims)
}

pub(crate) fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

/// Parameters of one stepwise-probability network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyHeadParams {
    pub ffn_s: FeedForward,
    pub ffn_h: FeedForward,
    pub bias: f64,
    pub temperature: f64,
}

impl PolicyHeadParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::argument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.ffn_s.output_dim() != self.ffn_h.output_dim() {
            return Err(Error::Shape {
                op: "policy head projections",
                left: (self.ffn_s.input_dim(), self.ffn_s.output_dim()),
                right: (self.ffn_h.input_dim(), self.ffn_h.output_dim()),
            });
        }
        Ok(())
    }
}

/// A monotonic attention head: its policy network plus the query/key
/// projections that produce the lookback energies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub policy: PolicyHeadParams,
    /// `d x d_k`
    pub query: Matrix,
    /// `d x d_k`
    pub key: Matrix,
}

/// Architecture and initialization of a head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub model_dim: usize,
    pub depth: usize,
    pub init_bias: f64,
    pub temperature: f64,
    pub init_scale: f64,
}

impl HeadConfig {
    pub fn new(model_dim: usize) -> Self {
        HeadConfig {
            model_dim,
            depth: 2,
            init_bias: DEFAULT_BIAS,
            temperature: DEFAULT_TEMPERATURE,
            init_scale: 1.0,
        }
    }
}

impl HeadParams {
    pub fn random<R: Rng + ?Sized>(config: &HeadConfig, rng: &mut R) -> Result<Self> {
        let d = config.model_dim;
        let ffn_s = FeedForward::random(d, d, d, config.depth, config.init_scale, rng)?;
        let ffn_h = FeedForward::random(d, d, d, config.depth, config.init_scale, rng)?;
        let std = config.init_scale / (d as f64).sqrt();
        Ok(HeadParams {
            policy: PolicyHeadParams {
                ffn_s,
                ffn_h,
                bias: config.init_bias,
                temperature: config.temperature,
            },
            query: gaussian(d, d, std, rng),
            key: gaussian(d, d, std, rng),
        })
    }
}

/// Toy output projection turning attended context into vocabulary logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Readout {
    /// `d_v x vocab`
    pub weight: Matrix,
    /// `1 x vocab`
    pub bias: Matrix,
}

impl Readout {
    pub fn zeros(d_v: usize, vocab: usize) -> Self {
        Readout {
            weight: Matrix::zeros(d_v, vocab),
            bias: Matrix::zeros(1, vocab),
        }
    }

    pub fn random<R: Rng + ?Sized>(d_v: usize, vocab: usize, scale: f64, rng: &mut R) -> Self {
        Readout {
            weight: gaussian(d_v, vocab, scale / (d_v as f64).sqrt(), rng),
            bias: Matrix::zeros(1, vocab),
        }
    }

    pub fn vocab(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_latency: f64,
    pub lambda_variance: f64,
}

impl LossWeights {
    pub fn new(lambda_latency: f64, lambda_variance: f64) -> Result<Self> {
        let w = LossWeights {
            lambda_latency,
            lambda_variance,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_latency >= 0.0 && self.lambda_variance >= 0.0) {
            return Err(Error::argument(format!(
                "loss weights must be non-negative, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Frozen encoder and decoder states of one training pair.
///
/// Row `i` of `s` is the decoder state that predicts target `i`, so row 0 is
/// the begin-of-sequence state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncDecStates {
    /// `|x| x d`
    pub h: Matrix,
    /// `|y| x d`
    pub s: Matrix,
    /// `|x| x d_v`
    pub v: Matrix,
}

impl EncDecStates {
    pub fn new(h: Matrix, s: Matrix, v: Matrix) -> Result<Self> {
        if h.rows() == 0 || s.rows() == 0 {
            return Err(Error::argument("source and target must be non-empty"));
        }
        if h.cols() != s.cols() {
            return Err(Error::Shape {
                op: "encoder/decoder state width",
                left: h.shape(),
                right: s.shape(),
            });
        }
        if v.rows() != h.rows() {
            return Err(Error::Shape {
                op: "value rows",
                left: h.shape(),
                right: v.shape(),
            });
        }
        Ok(EncDecStates { h, s, v })
    }

    pub fn source_len(&self) -> usize {
        self.h.rows()
    }

    pub fn target_len(&self) -> usize {
        self.s.rows()
    }

    pub fn model_dim(&self) -> usize {
        self.h.cols()
    }
}
