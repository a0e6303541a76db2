//! Moments of the alignment and the latency/variance losses built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// How expected delays are reduced to a latency loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyCost {
    /// Mean lag behind the ideal linear policy `(i - 1) |x| / |y|`.
    #[default]
    LagBehindIdeal,
    /// Plain mean of the expected delays.
    MeanDelay,
}

/// `d[i] = sum_k k * alpha[i][k]` with 1-based source positions.
pub fn expected_delays(alpha: &Matrix) -> Vec<f64> {
    (0..alpha.rows())
        .map(|i| {
            alpha
                .row(i)
                .iter()
                .enumerate()
                .map(|(k, a)| (k + 1) as f64 * a)
                .sum()
        })
        .collect()
}

/// `v[i] = sum_k k^2 alpha[i][k] - (sum_k k alpha[i][k])^2`.
pub fn alignment_variance(alpha: &Matrix) -> Vec<f64> {
    (0..alpha.rows())
        .map(|i| {
            let (mut first, mut second) = (0.0, 0.0);
            for (k, a) in alpha.row(i).iter().enumerate() {
                let pos = (k + 1) as f64;
                first += pos * a;
                second += pos * pos * a;
            }
            second - first * first
        })
        .collect()
}

/// Ideal delay of target `i` (0-based) under a linear schedule.
pub fn ideal_delay(i: usize, source_len: f64, target_len: usize) -> f64 {
    i as f64 * source_len / target_len as f64
}

pub fn latency_loss(delays: &[f64], source_len: usize, target_len: usize, cost: LatencyCost) -> Result<f64> {
    if target_len == 0 {
        return Err(Error::argument("target length must be positive"));
    }
    if delays.len() != target_len {
        return Err(Error::argument(format!(
            "{} expected delays for target length {target_len}",
            delays.len()
        )));
    }
    let total: f64 = match cost {
        LatencyCost::LagBehindIdeal => delays
            .iter()
            .enumerate()
            .map(|(i, d)| d - ideal_delay(i, source_len as f64, target_len))
            .sum(),
        LatencyCost::MeanDelay => delays.iter().sum(),
    };
    Ok(total / target_len as f64)
}

pub fn variance_loss(variances: &[f64]) -> Result<f64> {
    if variances.is_empty() {
        return Err(Error::argument("variance loss of an empty target"));
    }
    Ok(variances.iter().sum::<f64>() / variances.len() as f64)
}
