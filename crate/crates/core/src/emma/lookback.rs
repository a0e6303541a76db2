//! Infinite-lookback attention weights derived from a monotonic alignment.

use super::params::{EncDecStates, HeadParams};
use crate::error::{Error, Result};
use crate::numerics::{Axis, Matrix};

fn ensure_energies(alpha: &Matrix, e: &Matrix) -> Result<()> {
    alpha.ensure_same_shape(e, "lookback weights")?;
    if let Some(v) = e.as_slice().iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::domain(format!("attention energy {v} is not strictly positive")));
    }
    Ok(())
}

/// `beta[i][j] = sum_{k>=j} alpha[i][k] * e[i][j] / sum_{l<=k} e[i][l]`,
/// evaluated as the literal double sum.
pub fn beta_recursive(alpha: &Matrix, e: &Matrix) -> Result<Matrix> {
    ensure_energies(alpha, e)?;
    let (tgt, src) = alpha.shape();
    let mut data = Vec::with_capacity(tgt * src);
    for i in 0..tgt {
        let energies = e.row(i);
        let mut denominators = vec![0.0; src];
        for (k, d) in denominators.iter_mut().enumerate() {
            *d = energies[..=k].iter().sum();
        }
        for j in 0..src {
            let mut total = 0.0;
            for k in j..src {
                total += alpha.get(i, k) * energies[j] / denominators[k];
            }
            data.push(total);
        }
    }
    Matrix::new(tgt, src, data)
}

/// `beta = e ⊙ flip(cumsum(flip(alpha ⊙ 1/cumsum(e))))`.
pub fn beta_parallel(alpha: &Matrix, e: &Matrix) -> Result<Matrix> {
    ensure_energies(alpha, e)?;
    let normalized = alpha.hadamard(&e.cumsum(Axis::AlongRows).recip()?)?;
    e.hadamard(&normalized.flip().cumsum(Axis::AlongRows).flip())
}

/// Row-max shifted exponentiated scaled dot products between the head's
/// query projection of `s` and key projection of `h`.
pub fn attention_energies(head: &HeadParams, states: &EncDecStates) -> Result<Matrix> {
    let q = states.s.matmul(&head.query)?;
    let k = states.h.matmul(&head.key)?;
    let raw = q.matmul(&k.transpose())?.scale(1.0 / (head.query.cols() as f64).sqrt());
    Ok(shifted_exp(&raw))
}

/// `exp(x - rowmax(x))` row by row.
pub fn shifted_exp(raw: &Matrix) -> Matrix {
    let max = raw.row_max();
    Matrix::from_fn(raw.rows(), raw.cols(), |r, c| (raw.get(r, c) - max.get(r, 0)).exp())
}

/// `beta . V`
pub fn attention_output(beta: &Matrix, values: &Matrix) -> Result<Matrix> {
    if beta.cols() != values.rows() {
        return Err(Error::Shape {
            op: "attention_output",
            left: beta.shape(),
            right: values.shape(),
        });
    }
    beta.matmul(values)
}
